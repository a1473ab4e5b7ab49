"""Reference VAEs: one network over all signals, and one network per signal."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..dataset import SubsystemSignalsMap
from .composite import LossTerms, VaeOutput, window_mse
from .tcn import TcnDecoder, TcnEncoder, count_parameters, kl_standard_normal, reparameterize


class VanillaVae(nn.Module):
    """Single encoder/decoder pair over the full signal set.

    Subsystem scores are read off the shared reconstruction by averaging the
    squared error over that subsystem's columns.
    """

    kind = "vanilla"

    def __init__(self, smap: SubsystemSignalsMap, window_len: int = 500, latent_dim: int = 12,
                 channels=(32, 16), kernel_size: int = 8, dilations=(1, 2, 4), beta: float = 0.5) -> None:
        super().__init__()
        self.smap = smap
        self.window_len = window_len
        self.latent_dim = int(latent_dim)
        self.beta = float(beta)
        self.channels = tuple(channels)
        self.kernel_size = kernel_size
        self.dilations = tuple(dilations)
        net = dict(channels=self.channels, kernel_size=kernel_size, dilations=self.dilations)
        self.encoder = TcnEncoder(len(smap.signals), window_len, self.latent_dim, **net)
        self.decoder = TcnDecoder(len(smap.signals), window_len, self.latent_dim, **net)
        self._cols = {s: smap.columns_of(s) for s in smap.subsystems}

    @property
    def latent_total(self) -> int:
        return self.latent_dim

    def n_parameters(self) -> int:
        return count_parameters(self)

    def arch(self) -> dict:
        return {
            "kind": self.kind,
            "window_len": self.window_len,
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "dilations": list(self.dilations),
            "beta": self.beta,
            **self.smap.to_json(),
        }

    def sample_noise(self, n: int, generator: torch.Generator | None = None, dtype=torch.float32) -> dict[str, torch.Tensor]:
        return {"all": torch.randn(n, self.latent_dim, generator=generator, dtype=dtype)}

    def forward(self, x: torch.Tensor, noise: Mapping[str, torch.Tensor] | None = None) -> VaeOutput:
        mu, lv = self.encoder(x)
        z = reparameterize(mu, lv, None if noise is None else noise["all"])
        x_hat = self.decoder(z)
        return VaeOutput({"all": x_hat}, x_hat, {"all": (mu, lv)})

    def loss(self, x: torch.Tensor, out: VaeOutput) -> LossTerms:
        """MSE + beta KL; with one decoder the subsystem and global terms coincide."""
        mse = F.mse_loss(out.global_recon, x)
        kl = kl_standard_normal(*out.posteriors["all"])
        return LossTerms(mse + self.beta * kl, {"all": mse}, {"all": kl}).check_finite()

    @torch.no_grad()
    def window_scores(self, x: torch.Tensor) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        x_hat = self(x).global_recon
        subs = {s: window_mse(x[:, :, c], x_hat[:, :, c]) for s, c in self._cols.items()}
        return subs, window_mse(x, x_hat)


def aggregate_signal_scores(per_signal: Mapping[str, np.ndarray], smap: SubsystemSignalsMap):
    """Subsystem score = mean of its signals' scores; global = mean over all signals."""
    missing = [p for p in smap.signals if p not in per_signal]
    if missing:
        raise KeyError(f"no score for signal(s) {missing}")
    subs = {s: np.mean([np.asarray(per_signal[p], dtype=np.float64) for p in smap.signals_of(s)], axis=0)
            for s in smap.subsystems}
    total = np.mean([np.asarray(per_signal[p], dtype=np.float64) for p in smap.signals], axis=0)
    return subs, total


class UnivariateVae(nn.Module):
    """One independent encoder/decoder pair per signal.

    The pairs are optimised together on the mean of their individual losses;
    since no parameter is shared, each pair receives exactly the gradient it
    would get if trained alone.
    """

    kind = "univariate"

    def __init__(self, smap: SubsystemSignalsMap, window_len: int = 500, latent_dim: int = 2,
                 channels=(16, 8), kernel_size: int = 8, dilations=(1, 2, 4), beta: float = 0.5) -> None:
        super().__init__()
        self.smap = smap
        self.window_len = window_len
        self.latent_dim = int(latent_dim)
        self.beta = float(beta)
        self.channels = tuple(channels)
        self.kernel_size = kernel_size
        self.dilations = tuple(dilations)
        net = dict(channels=self.channels, kernel_size=kernel_size, dilations=self.dilations)
        self.encoders = nn.ModuleDict({p: TcnEncoder(1, window_len, self.latent_dim, **net) for p in smap.signals})
        self.decoders = nn.ModuleDict({p: TcnDecoder(1, window_len, self.latent_dim, **net) for p in smap.signals})

    @property
    def latent_total(self) -> int:
        return self.latent_dim * len(self.smap.signals)

    def n_parameters(self) -> int:
        return count_parameters(self)

    def arch(self) -> dict:
        return {
            "kind": self.kind,
            "window_len": self.window_len,
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "kernel_size": self.kernel_size,
            "dilations": list(self.dilations),
            "beta": self.beta,
            **self.smap.to_json(),
        }

    def sample_noise(self, n: int, generator: torch.Generator | None = None, dtype=torch.float32) -> dict[str, torch.Tensor]:
        return {p: torch.randn(n, self.latent_dim, generator=generator, dtype=dtype) for p in self.smap.signals}

    def forward(self, x: torch.Tensor, noise: Mapping[str, torch.Tensor] | None = None) -> VaeOutput:
        if x.ndim != 3 or x.shape[2] != len(self.smap.signals):
            raise ValueError(f"expected (N, T, {len(self.smap.signals)}) input, got {tuple(x.shape)}")
        recon, posteriors = {}, {}
        for j, p in enumerate(self.smap.signals):
            mu, lv = self.encoders[p](x[:, :, j : j + 1])
            z = reparameterize(mu, lv, None if noise is None else noise[p])
            recon[p] = self.decoders[p](z)
            posteriors[p] = (mu, lv)
        return VaeOutput(recon, torch.cat([recon[p] for p in self.smap.signals], dim=2), posteriors)

    def loss(self, x: torch.Tensor, out: VaeOutput) -> LossTerms:
        mse = {p: F.mse_loss(out.recon[p], x[:, :, j : j + 1]) for j, p in enumerate(self.smap.signals)}
        kl = {p: kl_standard_normal(*out.posteriors[p]) for p in self.smap.signals}
        total = sum(mse[p] + self.beta * kl[p] for p in self.smap.signals) / len(self.smap.signals)
        return LossTerms(total, mse, kl).check_finite()

    @torch.no_grad()
    def signal_scores(self, x: torch.Tensor) -> dict[str, np.ndarray]:
        out = self(x)
        return {p: window_mse(x[:, :, j : j + 1], out.recon[p]).double().numpy() for j, p in enumerate(self.smap.signals)}

    @torch.no_grad()
    def window_scores(self, x: torch.Tensor) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
        subs, total = aggregate_signal_scores(self.signal_scores(x), self.smap)
        return {s: torch.from_numpy(v) for s, v in subs.items()}, torch.from_numpy(total)
