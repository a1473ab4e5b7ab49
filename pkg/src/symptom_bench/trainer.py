"""Seeded training with early stopping, and exhaustive hyperparameter search."""

from __future__ import annotations

import csv
import copy
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import Dataset
from .models.checkpoint import MODEL_KINDS, build_model, save_checkpoint
from .models.composite import NonFiniteLossError
from .models.gmm import fit_gmm_model

log = logging.getLogger(__name__)

# architecture defaults per kind, sized for the 100k-1M parameter budget
DEFAULT_ARCH = {
    "composite": {"latent_dim": 6, "channels": [32, 16], "kernel_size": 8, "dilations": [1, 2, 4]},
    "vanilla": {"latent_dim": 12, "channels": [32, 16], "kernel_size": 8, "dilations": [1, 2, 4]},
    "univariate": {"latent_dim": 2, "channels": [16, 8], "kernel_size": 8, "dilations": [1, 2, 4]},
    "gmm": {},
}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, term: str) -> None:
        super().__init__(f"training diverged at epoch {epoch} (non-finite {term})")
        self.epoch = epoch
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "composite"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    beta: float = 1e-3
    seed: int = 0
    grid: dict | None = None
    model: dict = field(default_factory=dict)  # architecture overrides, see DEFAULT_ARCH
    gmm_k_grid: tuple = (1, 2, 4, 8)
    gmm_max_points: int = 20000
    gmm_restarts: int = 5

    def __post_init__(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.patience < self.max_epochs:
            raise ValueError(f"need 0 <= patience < max_epochs, got {self.patience}, {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        unknown = set(self.model) - set(DEFAULT_ARCH["composite"])
        if unknown:
            raise ValueError(f"unknown model option(s) {sorted(unknown)}")

    def arch(self) -> dict:
        return {**DEFAULT_ARCH[self.model_kind], **self.model}

    def to_json(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Tracks the best validation loss; stops after ``patience`` epochs without improvement."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record ``val_loss``; returns True when it is a new best."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    model: object
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    config: TrainConfig

    def write(self, out_dir: str | Path, **extra) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.model, out / "checkpoint.zip", seed=self.config.seed, best_epoch=self.best_epoch, **extra)
        write_history(self.history, out / "history.csv")
        return out


def write_history(history: list[dict], path: Path) -> None:
    keys = list(history[0]) if history else ["epoch", "train_loss", "val_loss"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _tensor(batch) -> torch.Tensor:
    return torch.from_numpy(np.array(batch.values, dtype=np.float32))


@torch.no_grad()
def evaluate_loss(model, x: torch.Tensor, batch_size: int = 256) -> dict[str, float]:
    """Loss terms at the posterior mean, averaged over windows."""
    model.eval()
    sums: dict[str, float] = {}
    for i in range(0, len(x), batch_size):
        xb = x[i : i + batch_size]
        for k, v in model.loss(xb, model(xb)).scalars().items():
            sums[k] = sums.get(k, 0.0) + v * len(xb)
    return {k: v / len(x) for k, v in sums.items()}


def train(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Fit ``cfg.model_kind`` on the healthy train split with early stopping.

    Returns the parameters of the epoch with the lowest validation loss.
    """
    if cfg.model_kind == "gmm":
        return _train_gmm(cfg, dataset)

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = build_model(cfg.model_kind, dataset.smap, window_len=dataset.train.window_len, beta=cfg.beta, **cfg.arch())
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    x_train, x_val = _tensor(dataset.train), _tensor(dataset.val)
    stopper = EarlyStopping(cfg.patience)
    best_state = copy.deepcopy(model.state_dict())
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        perm = torch.randperm(len(x_train), generator=gen)
        total = 0.0
        for i in range(0, len(x_train), cfg.batch_size):
            xb = x_train[perm[i : i + cfg.batch_size]]
            try:
                terms = model.loss(xb, model(xb, model.sample_noise(len(xb), gen)))
            except NonFiniteLossError as err:
                raise TrainingDiverged(epoch, err.term) from err
            opt.zero_grad()
            terms.total.backward()
            opt.step()
            total += float(terms.total.detach()) * len(xb)
        try:
            val = evaluate_loss(model, x_val)
        except NonFiniteLossError as err:
            raise TrainingDiverged(epoch, f"validation {err.term}") from err
        row = {"epoch": epoch, "train_loss": total / len(x_train), "val_loss": val["loss"]}
        row.update({k: v for k, v in val.items() if k.startswith("kl_")})
        history.append(row)
        if stopper.update(epoch, val["loss"]):
            best_state = copy.deepcopy(model.state_dict())
        log.info("%s seed=%d epoch %d train %.5f val %.5f", cfg.model_kind, cfg.seed, epoch, row["train_loss"], row["val_loss"])
        if stopper.should_stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, stopper.best_epoch, stopper.best, cfg)


def _train_gmm(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    model, report = fit_gmm_model(dataset.train, dataset.val, dataset.smap, cfg.seed, k_grid=cfg.gmm_k_grid,
                                  max_points=cfg.gmm_max_points, n_restarts=cfg.gmm_restarts)
    val_ll = sum(report[f"{s}/k={k}"] for s, k in model.k.items())
    train_ll = sum(model.components[s].log_likelihood_trace[-1] for s in dataset.smap.subsystems)
    history = [{"epoch": 1, "train_loss": -train_ll, "val_loss": -val_ll}]
    return TrainResult(model, history, 1, -val_ll, cfg)


# -------------------------------------------------------------- grid search

_TOP_LEVEL = {"learning_rate", "batch_size", "beta", "max_epochs", "patience"}


def _apply(cfg: TrainConfig, point: dict) -> TrainConfig:
    top = {k: v for k, v in point.items() if k in _TOP_LEVEL}
    arch = {k.split(".", 1)[1]: v for k, v in point.items() if k.startswith("model.")}
    unknown = set(point) - set(top) - {f"model.{k}" for k in arch}
    if unknown:
        raise ValueError(f"unknown grid key(s) {sorted(unknown)}")
    return replace(cfg, **top, model={**cfg.model, **arch}, grid=None)


def _sort_token(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


@dataclass
class GridSearchResult:
    best: TrainConfig
    best_result: TrainResult
    table: list[dict]  # one row per grid point: point, val_loss (inf if diverged)


def grid_search(cfg: TrainConfig, dataset: Dataset) -> GridSearchResult:
    """Train every grid point and keep the lowest validation loss.

    Diverged points are skipped. Ties go to the lexicographically smallest
    point (keys in sorted order), then to the smaller learning rate.
    """
    if not cfg.grid or any(len(v) == 0 for v in cfg.grid.values()):
        raise ValueError("grid search needs a non-empty grid")
    keys = sorted(cfg.grid)
    table, ranked = [], []
    for values in itertools.product(*(cfg.grid[k] for k in keys)):
        point = dict(zip(keys, values))
        cand = _apply(cfg, point)
        try:
            res = train(cand, dataset)
        except TrainingDiverged as err:
            log.warning("grid point %s diverged: %s", point, err)
            table.append({"point": point, "val_loss": math.inf, "diverged_epoch": err.epoch})
            continue
        table.append({"point": point, "val_loss": res.best_val_loss})
        order = (res.best_val_loss, tuple(_sort_token(v) for v in values), cand.learning_rate)
        ranked.append((order, cand, res))
    if not ranked:
        raise TrainingDiverged(-1, "every grid point")
    ranked.sort(key=lambda r: r[0])
    _, best, best_res = ranked[0]
    return GridSearchResult(best, best_res, table)
