"""Composite-latent-space VAE.

Every subsystem gets its own encoder and decoder; the decoder of subsystem
``i`` only ever sees ``z_i``. A global decoder reads the concatenation of all
subsystem latents and reconstructs the full signal set, which is the only path
able to notice broken relations *between* subsystems.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..dataset import SubsystemSignalsMap
from .tcn import TcnDecoder, TcnEncoder, count_parameters, kl_standard_normal, reparameterize

RESERVED_NAMES = ("global", "all")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str) -> None:
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term


@dataclass
class VaeOutput:
    recon: dict[str, torch.Tensor]  # per subsystem (or per signal for the univariate model)
    global_recon: torch.Tensor
    posteriors: dict[str, tuple[torch.Tensor, torch.Tensor]]


@dataclass
class LossTerms:
    total: torch.Tensor
    mse: dict[str, torch.Tensor] = field(default_factory=dict)
    kl: dict[str, torch.Tensor] = field(default_factory=dict)
    global_mse: torch.Tensor | None = None

    def check_finite(self) -> LossTerms:
        named = [("total", self.total), ("global_mse", self.global_mse)]
        named += [(f"mse_{k}", v) for k, v in self.mse.items()] + [(f"kl_{k}", v) for k, v in self.kl.items()]
        for name, value in named[1:] + named[:1]:
            if value is not None and not torch.isfinite(value).all():
                raise NonFiniteLossError(name)
        return self

    def scalars(self) -> dict[str, float]:
        out = {"loss": float(self.total.detach())}
        out.update({f"kl_{k}": float(v.detach()) for k, v in self.kl.items()})
        out.update({f"mse_{k}": float(v.detach()) for k, v in self.mse.items()})
        if self.global_mse is not None:
            out["mse_global"] = float(self.global_mse.detach())
        return out


def _latent_dims(names, latent_dim) -> dict[str, int]:
    if isinstance(latent_dim, Mapping):
        dims = {s: int(latent_dim[s]) for s in names}
    else:
        dims = {s: int(latent_dim) for s in names}
    if any(m < 1 for m in dims.values()):
        raise ValueError(f"latent dims must be positive, got {dims}")
    return dims


def window_mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Per-window MSE over all (time, signal) entries, shape ``(N,)``."""
    return (x - x_hat).pow(2).flatten(1).mean(dim=1)


class CompositeVae(nn.Module):
    kind = "composite"

    def __init__(self, smap: SubsystemSignalsMap, window_len: int = 500, latent_dim: int | Mapping[str, int] = 6,
                 channels=(32, 16), kernel_size: int = 8, dilations=(1, 2, 4), beta: float = 0.5) -> None:
        super().__init__()
        bad = [s for s in smap.subsystems if s in RESERVED_NAMES]
        if bad:
            raise ValueError(f"subsystem ids {bad} are reserved")
        self.smap = smap
        self.window_len = window_len
        self.beta = float(beta)
        self.latent_dims = _latent_dims(smap.subsystems, latent_dim)
        self.channels = tuple(channels)
        self.kernel_size = kernel_size
        self.dilations = tuple(dilations)
        m = sum(self.latent_dims.values())
        if 10 * m > window_len * len(smap.signals):
            raise ValueError(f"composite latent dim {m} is not small against window size {window_len}x{len(smap.signals)}")
        net = dict(channels=self.channels, kernel_size=kernel_size, dilations=self.dilations)
        self.encoders = nn.ModuleDict(
            {s: TcnEncoder(len(smap.signals_of(s)), window_len, self.latent_dims[s], **net) for s in smap.subsystems}
        )
        self.decoders = nn.ModuleDict(
            {s: TcnDecoder(len(smap.signals_of(s)), window_len, self.latent_dims[s], **net) for s in smap.subsystems}
        )
        self.global_decoder = TcnDecoder(len(smap.signals), window_len, m, **net)
        self._cols = {s: smap.columns_of(s) for s in smap.subsystems}

    @property
    def latent_total(self) -> int:
        return sum(self.latent_dims.values())

    def n_parameters(self) -> int:
        return count_parameters(self)

    def arch(self) -> dict:
        return {
            "kind": self.kind,
            "window_len": self.window_len,
            "latent_dim": dict(self.latent_dims),
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "dilations": list(self.dilations),
            "beta": self.beta,
            **self.smap.to_json(),
        }

    def split(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        if x.ndim != 3 or x.shape[2] != len(self.smap.signals):
            raise ValueError(f"expected (N, T, {len(self.smap.signals)}) input, got {tuple(x.shape)}")
        return {s: x[:, :, cols] for s, cols in self._cols.items()}

    def encode(self, x: torch.Tensor) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        parts = self.split(x)
        return {s: self.encoders[s](parts[s]) for s in self.smap.subsystems}

    def sample_noise(self, n: int, generator: torch.Generator | None = None, dtype=torch.float32) -> dict[str, torch.Tensor]:
        return {s: torch.randn(n, m, generator=generator, dtype=dtype) for s, m in self.latent_dims.items()}

    def forward(self, x: torch.Tensor, noise: Mapping[str, torch.Tensor] | None = None) -> VaeOutput:
        """Reconstruct ``x``; without ``noise`` every latent is its posterior mean."""
        posteriors = self.encode(x)
        z = {s: reparameterize(mu, lv, None if noise is None else noise[s]) for s, (mu, lv) in posteriors.items()}
        recon = {s: self.decoders[s](z[s]) for s in self.smap.subsystems}
        z_c = torch.cat([z[s] for s in self.smap.subsystems], dim=1)
        return VaeOutput(recon, self.global_decoder(z_c), posteriors)

    def loss(self, x: torch.Tensor, out: VaeOutput) -> LossTerms:
        """Mean over subsystems of (MSE_i + beta KL_i), plus the global MSE."""
        parts = self.split(x)
        mse = {s: F.mse_loss(out.recon[s], parts[s]) for s in self.smap.subsystems}
        kl = {s: kl_standard_normal(*out.posteriors[s]) for s in self.smap.subsystems}
        global_mse = F.mse_loss(out.global_recon, x)
        sub = sum(mse[s] + self.beta * kl[s] for s in self.smap.subsystems) / len(self.smap.subsystems)
        return LossTerms(sub + global_mse, mse, kl, global_mse).check_finite()

    @torch.no_grad()
    def window_scores(self, x: torch.Tensor) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        """Deterministic per-window reconstruction errors (subsystems, global)."""
        out = self(x)
        parts = self.split(x)
        return {s: window_mse(parts[s], out.recon[s]) for s in self.smap.subsystems}, window_mse(x, out.global_recon)
