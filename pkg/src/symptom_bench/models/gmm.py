"""Full-covariance Gaussian mixtures fitted by EM, one per subsystem.

The mixture only sees instantaneous signal vectors, so a window's score is the
average negative log-density of its time steps and is blind to their order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..dataset import SubsystemSignalsMap, WindowBatch

JITTER = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


class DegenerateCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class GmmComponentSet:
    """A fitted mixture over ``d``-dimensional points."""

    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood_trace: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {points.shape}")
        return logsumexp(_component_log_pdf(points, self.means, self.covariances) + np.log(self.weights), axis=1)

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> GmmComponentSet:
        return cls(np.asarray(obj["weights"]), np.asarray(obj["means"]), np.asarray(obj["covariances"]))


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DegenerateCovarianceError("covariance not positive definite after jitter") from None


def _component_log_pdf(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``log N(x_n | mu_k, Sigma_k)``, shape ``(n, k)``."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for j, (mu, cov) in enumerate(zip(means, covs)):
        chol = _cholesky(cov)
        sol = np.linalg.solve(chol, (x - mu).T)  # (d, n)
        maha = np.sum(sol**2, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -0.5 * (d * LOG_2PI + log_det + maha)
    return out


def _em(x: np.ndarray, k: int, rng: np.random.Generator, tol: float, max_iter: int) -> GmmComponentSet:
    n, d = x.shape
    eye = np.eye(d) * JITTER
    # k-means++-style seeding of the means, shared data covariance to start
    means = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.asarray(means)[None]) ** 2).sum(-1), axis=1)
        p = d2 / d2.sum() if d2.sum() > 0 else None
        means.append(x[rng.choice(n, p=p)])
    means = np.asarray(means)
    covs = np.repeat((np.cov(x, rowvar=False).reshape(d, d) + eye)[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    for _ in range(max_iter):
        log_joint = _component_log_pdf(x, means, covs) + np.log(weights)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(log_norm.mean())
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for j in range(k):
            diff = x - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + eye
    return GmmComponentSet(weights, means, covs, trace)


def gmm_fit(samples: np.ndarray, k: int, seed: int, n_restarts: int = 5, tol: float = 1e-6,
            max_iter: int = 500) -> GmmComponentSet:
    """Best-of-``n_restarts`` EM fit by final mean log-likelihood.

    EM stops once the mean per-point log-likelihood improves by less than
    ``tol`` or after ``max_iter`` iterations.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be 2-D, got shape {x.shape}")
    if x.shape[0] < 10 * k * x.shape[1]:
        raise ValueError(f"need at least {10 * k * x.shape[1]} points for k={k}, d={x.shape[1]}; got {x.shape[0]}")
    best = None
    for r in range(n_restarts):
        fit = _em(x, k, np.random.default_rng([seed, k, r]), tol, max_iter)
        if best is None or fit.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = fit
    return best


def gmm_score(model: GmmComponentSet, window: np.ndarray) -> float:
    """Mean negative log-density over the time steps of one ``(T, d)`` window.

    Summed in sorted order so the result is exactly invariant to reordering
    the time steps.
    """
    return float(-np.sort(model.log_density(window)).mean())


class GmmModel:
    """Per-subsystem mixtures; the global score is the sum of the subsystem scores,
    i.e. the NLL of the joint density that treats subsystems as independent."""

    kind = "gmm"

    def __init__(self, smap: SubsystemSignalsMap, components: dict[str, GmmComponentSet],
                 k: dict[str, int] | None = None) -> None:
        self.smap = smap
        self.components = components
        self.k = k or {s: len(c.weights) for s, c in components.items()}

    @property
    def latent_total(self) -> int:
        return 0

    def n_parameters(self) -> int:
        return sum(c.weights.size + c.means.size + c.covariances.size for c in self.components.values())

    def arch(self) -> dict:
        return {"kind": self.kind, "k": dict(self.k), **self.smap.to_json()}

    def window_scores_np(self, values: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        subs = {}
        for s in self.smap.subsystems:
            cols = self.smap.columns_of(s)
            comp = self.components[s]
            n, t, _ = values.shape
            logp = comp.log_density(values[:, :, cols].reshape(n * t, len(cols))).reshape(n, t)
            subs[s] = -np.sort(logp, axis=1).mean(axis=1)
        return subs, np.sum([subs[s] for s in self.smap.subsystems], axis=0)


def fit_gmm_model(train: WindowBatch, val: WindowBatch, smap: SubsystemSignalsMap, seed: int,
                  k_grid=(1, 2, 4, 8), max_points: int = 20000, n_restarts: int = 5) -> tuple[GmmModel, dict]:
    """Fit one mixture per subsystem, choosing ``k`` by validation log-likelihood.

    Time steps are pooled over windows and subsampled to ``max_points``.
    """
    rng = np.random.default_rng([seed, 7])
    chosen, comps, report = {}, {}, {}
    for s in smap.subsystems:
        cols = smap.columns_of(s)
        pts = train.values[:, :, cols].reshape(-1, len(cols))
        vpts = val.values[:, :, cols].reshape(-1, len(cols))
        if len(pts) > max_points:
            pts = pts[rng.choice(len(pts), max_points, replace=False)]
        if len(vpts) > max_points:
            vpts = vpts[rng.choice(len(vpts), max_points, replace=False)]
        best = None
        for k in k_grid:
            fit = gmm_fit(pts, k, seed, n_restarts=n_restarts)
            val_ll = float(fit.log_density(vpts).mean())
            report[f"{s}/k={k}"] = val_ll
            if best is None or val_ll > best[0]:
                best = (val_ll, k, fit)
        chosen[s], comps[s] = best[1], best[2]
    return GmmModel(smap, comps, chosen), report
