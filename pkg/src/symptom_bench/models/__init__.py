from .checkpoint import MODEL_KINDS, build_model, load_checkpoint, save_checkpoint
from .composite import CompositeVae, LossTerms, NonFiniteLossError, VaeOutput
from .gmm import GmmModel, gmm_fit, gmm_score
from .vae_baselines import UnivariateVae, VanillaVae, aggregate_signal_scores

__all__ = [
    "MODEL_KINDS",
    "CompositeVae",
    "GmmModel",
    "LossTerms",
    "NonFiniteLossError",
    "UnivariateVae",
    "VaeOutput",
    "VanillaVae",
    "aggregate_signal_scores",
    "build_model",
    "gmm_fit",
    "gmm_score",
    "load_checkpoint",
    "save_checkpoint",
]
