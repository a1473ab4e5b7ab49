"""Non-causal dilated residual TCN encoder/decoder used by every VAE variant."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ResidualBlockSpec:
    channels_in: int
    channels_out: int
    kernel_size: int
    dilation: int


def same_padding(kernel_size: int, dilation: int) -> tuple[int, int]:
    """(left, right) padding keeping length; an odd total puts the extra step right."""
    total = dilation * (kernel_size - 1)
    return total // 2, total - total // 2


class ResidualBlock(nn.Module):
    """Two dilated convolutions with 'same' padding plus a skip connection."""

    def __init__(self, spec: ResidualBlockSpec) -> None:
        super().__init__()
        self.spec = spec
        self.pad = same_padding(spec.kernel_size, spec.dilation)
        self.conv1 = nn.Conv1d(spec.channels_in, spec.channels_out, spec.kernel_size, dilation=spec.dilation)
        self.conv2 = nn.Conv1d(spec.channels_out, spec.channels_out, spec.kernel_size, dilation=spec.dilation)
        self.skip = nn.Conv1d(spec.channels_in, spec.channels_out, 1) if spec.channels_in != spec.channels_out else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(F.pad(x, self.pad)))
        h = self.conv2(F.pad(h, self.pad))
        res = x if self.skip is None else self.skip(x)
        return F.relu(h + res)


def _stack(c_in: int, c_out: int, kernel_size: int, dilations) -> nn.Sequential:
    return nn.Sequential(
        *[ResidualBlock(ResidualBlockSpec(c_in if j == 0 else c_out, c_out, kernel_size, d)) for j, d in enumerate(dilations)]
    )


class TcnEncoder(nn.Module):
    """Two residual stacks, each followed by a halving max-pool, then a dense
    head producing the posterior mean and log-variance.

    Input is ``(N, T, C)``; ``T`` must be divisible by 4.
    """

    LOGVAR_CLAMP = 10.0

    def __init__(self, n_signals: int, window_len: int, latent_dim: int, channels=(32, 16),
                 kernel_size: int = 8, dilations=(1, 2, 4)) -> None:
        super().__init__()
        if window_len % 4:
            raise ValueError(f"window_len must be divisible by 4, got {window_len}")
        c1, c2 = channels
        self.n_signals = n_signals
        self.window_len = window_len
        self.latent_dim = latent_dim
        self.stack1 = _stack(n_signals, c1, kernel_size, dilations)
        self.stack2 = _stack(c1, c2, kernel_size, dilations)
        self.pool = nn.MaxPool1d(2)
        self.head = nn.Linear(c2 * (window_len // 4), 2 * latent_dim)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pooled feature map ``(N, c2, T // 4)``."""
        if x.ndim != 3 or x.shape[1] != self.window_len or x.shape[2] != self.n_signals:
            raise ValueError(
                f"encoder expects (N, {self.window_len}, {self.n_signals}), got {tuple(x.shape)}"
            )
        h = self.pool(self.stack1(x.transpose(1, 2)))
        return self.pool(self.stack2(h))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.head(self.features(x).flatten(1))
        mu, logvar = out.chunk(2, dim=1)
        return mu, logvar.clamp(-self.LOGVAR_CLAMP, self.LOGVAR_CLAMP)


class TcnDecoder(nn.Module):
    """Mirror of :class:`TcnEncoder`: dense, then (upsample x2, residual stack)
    twice, then a linear 1x1 projection back to ``n_signals``."""

    def __init__(self, n_signals: int, window_len: int, latent_dim: int, channels=(32, 16),
                 kernel_size: int = 8, dilations=(1, 2, 4)) -> None:
        super().__init__()
        if window_len % 4:
            raise ValueError(f"window_len must be divisible by 4, got {window_len}")
        c1, c2 = channels
        rev = tuple(reversed(dilations))
        self.n_signals = n_signals
        self.window_len = window_len
        self.latent_dim = latent_dim
        self.c2 = c2
        self.head = nn.Linear(latent_dim, c2 * (window_len // 4))
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.stack2 = _stack(c2, c2, kernel_size, rev)
        self.stack1 = _stack(c2, c1, kernel_size, rev)
        self.out = nn.Conv1d(c1, n_signals, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.head(z).view(z.shape[0], self.c2, self.window_len // 4)
        h = self.stack2(self.up(h))
        h = self.stack1(self.up(h))
        return self.out(h).transpose(1, 2)


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor | None) -> torch.Tensor:
    """``mu + exp(logvar / 2) * noise``; ``noise=None`` returns the posterior mean."""
    if noise is None:
        return mu
    if noise.shape != mu.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != posterior shape {tuple(mu.shape)}")
    return mu + torch.exp(0.5 * logvar) * noise


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(q || N(0, I)) summed over latent dims and averaged over the batch."""
    per_window = -0.5 * torch.sum(1.0 + logvar - mu.pow(2) - logvar.exp(), dim=1)
    return per_window.mean()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
