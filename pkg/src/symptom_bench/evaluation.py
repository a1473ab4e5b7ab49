"""From reconstructions to health states.

Each window gets one anomaly score per subsystem plus a global one; a
best-F1 threshold per target turns scores into OK / NOT_OK bits, and the bits
are exported as observations for a consistency-based diagnosis engine.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import HealthVector, SubsystemSignalsMap, WindowBatch

GLOBAL = "all"


@dataclass(frozen=True)
class ScoreRecord:
    window_id: int
    per_subsystem: Mapping[str, float]
    global_score: float

    def __post_init__(self) -> None:
        vals = [*self.per_subsystem.values(), self.global_score]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite score in window {self.window_id}")

    def get(self, target: str) -> float:
        return self.global_score if target == GLOBAL else self.per_subsystem[target]


@dataclass(frozen=True)
class Metrics:
    f1: float
    precision: float
    recall: float
    no_predicted_positives: bool = False


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def metrics(pred: Sequence[int], labels: Sequence[int]) -> Metrics:
    """F1/precision/recall of binary predictions; precision is 0 (and flagged)
    when nothing is predicted positive."""
    pred = np.asarray(pred, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if pred.shape != labels.shape:
        raise ValueError(f"length mismatch: {pred.shape} predictions vs {labels.shape} labels")
    if not labels.any():
        raise ValueError("labels contain no positive")
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    none = tp + fp == 0
    precision = 0.0 if none else tp / (tp + fp)
    return Metrics(_f1(tp, fp, fn), precision, tp / (tp + fn), none)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    f1: float
    precision: float
    recall: float


def candidate_thresholds(scores: Sequence[float]) -> np.ndarray:
    """-inf, midpoints between consecutive distinct sorted scores, +inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def best_f1_threshold(scores: Sequence[float], labels: Sequence[int]) -> ThresholdResult:
    """Threshold maximising F1 of ``score > threshold``; ties go to the larger threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if y.min(initial=1) == y.max(initial=0) or len(y) == 0:
        raise ValueError("best-F1 thresholding needs both positive and negative labels")
    u, inv = np.unique(s, return_inverse=True)
    pos_at = np.bincount(inv, weights=y, minlength=len(u)).astype(int)
    cnt_at = np.bincount(inv, minlength=len(u))
    n_pos = int(y.sum())
    # candidate c predicts positive for unique values with index >= c (c = 0..len(u))
    tp = np.concatenate([np.cumsum(pos_at[::-1])[::-1], [0]])
    pp = np.concatenate([np.cumsum(cnt_at[::-1])[::-1], [0]])
    fp = pp - tp
    fn = n_pos - tp
    f1 = np.array([_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)])
    best = int(np.flatnonzero(f1 == f1.max())[-1])
    thr = candidate_thresholds(s)[best]
    precision = tp[best] / pp[best] if pp[best] else 0.0
    return ThresholdResult(float(thr), float(f1[best]), float(precision), float(tp[best] / n_pos))


@dataclass(frozen=True)
class ThresholdSet:
    per_subsystem: Mapping[str, float]
    global_: float
    achieved_f1: Mapping[str, float] = field(default_factory=dict)

    def get(self, target: str) -> float:
        return self.global_ if target == GLOBAL else self.per_subsystem[target]

    def to_json(self) -> dict:
        enc = lambda v: v if math.isfinite(v) else ("inf" if v > 0 else "-inf")  # noqa: E731
        return {
            "per_subsystem": {k: enc(v) for k, v in self.per_subsystem.items()},
            "global": enc(self.global_),
            "achieved_f1": dict(self.achieved_f1),
        }

    @classmethod
    def from_json(cls, obj: dict) -> ThresholdSet:
        return cls({k: float(v) for k, v in obj["per_subsystem"].items()}, float(obj["global"]),
                   obj.get("achieved_f1", {}))


def calibrate(records: Sequence[ScoreRecord], labels: Mapping[str, Sequence[int]]) -> tuple[ThresholdSet, dict[str, ThresholdResult]]:
    """Best-F1 threshold for each target in ``labels`` (subsystem ids plus ``"all"``)."""
    results = {t: best_f1_threshold([r.get(t) for r in records], labels[t]) for t in labels}
    subs = {t: r.threshold for t, r in results.items() if t != GLOBAL}
    return ThresholdSet(subs, results[GLOBAL].threshold, {t: r.f1 for t, r in results.items()}), results


def binarize(records: Sequence[ScoreRecord], thresholds: ThresholdSet) -> list[HealthVector]:
    """``h_s = 1`` iff ``score_s > threshold_s`` (strictly); same for the global flag."""
    out = []
    for r in records:
        missing = [s for s in r.per_subsystem if s not in thresholds.per_subsystem]
        if missing:
            raise KeyError(f"no threshold for subsystem(s) {missing}")
        bits = {s: int(v > thresholds.per_subsystem[s]) for s, v in r.per_subsystem.items()}
        out.append(HealthVector(r.window_id, bits, int(r.global_score > thresholds.global_)))
    return out


def export_observations(healths: Sequence[HealthVector], out: str | Path) -> Path:
    """One JSON object per window: ``{"window_id", "observations": {s: "OK"|"NOT_OK"}, "global"}``."""
    word = ("OK", "NOT_OK")
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for h in healths:
            obs = {s: word[b] for s, b in h.per_subsystem.items()}
            fh.write(json.dumps({"window_id": h.window_id, "observations": obs, "global": word[h.global_flag]}) + "\n")
    return path


# ------------------------------------------------------------------ scoring


def score_arrays(model, batch: WindowBatch, chunk: int = 128) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Per-window scores as arrays: ``({subsystem: (N,)}, (N,))``."""
    if model.kind == "gmm":
        return model.window_scores_np(batch.values)
    if hasattr(model, "smap") and tuple(batch.signals) != model.smap.signals:
        raise ValueError(f"batch signal order {batch.signals} != model order {model.smap.signals}")
    dtype = next(model.parameters()).dtype
    model.eval()
    subs: dict[str, list] = {}
    glob = []
    with torch.no_grad():
        for i in range(0, len(batch), chunk):
            x = torch.tensor(np.array(batch.values[i : i + chunk]), dtype=dtype)
            s, g = model.window_scores(x)
            for k, v in s.items():
                subs.setdefault(k, []).append(v.double().numpy())
            glob.append(g.double().numpy())
    return {k: np.concatenate(v) for k, v in subs.items()}, np.concatenate(glob)


def score(model_kind: str, model, batch: WindowBatch, smap: SubsystemSignalsMap) -> list[ScoreRecord]:
    """Deterministic anomaly scores (posterior means, no sampling) for every window."""
    if model.kind != model_kind:
        raise ValueError(f"model is {model.kind!r}, expected {model_kind!r}")
    if model.smap != smap:
        raise ValueError("model was built for a different subsystem map")
    subs, glob = score_arrays(model, batch)
    return [
        ScoreRecord(wid, {s: float(subs[s][i]) for s in smap.subsystems}, float(glob[i]))
        for i, wid in enumerate(batch.window_ids)
    ]


def write_scores(records: Sequence[ScoreRecord], labels: Mapping[int, Mapping], smap: SubsystemSignalsMap,
                 path: str | Path) -> Path:
    """``scores.csv``: window_id, score_<s>..., score_global, label_<s>..., label_all."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    subs = list(smap.subsystems)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_id", *(f"score_{s}" for s in subs), "score_global",
                    *(f"label_{s}" for s in subs), "label_all"])
        for r in records:
            lab = labels[r.window_id]
            w.writerow([r.window_id, *(repr(r.per_subsystem[s]) for s in subs), repr(r.global_score),
                        *(lab[f"label_{s}"] for s in subs), lab["label_all"]])
    return path


def read_scores(path: str | Path, smap: SubsystemSignalsMap | None = None) -> tuple[list[ScoreRecord], dict[str, np.ndarray]]:
    """Inverse of :func:`write_scores`; labels keyed by target (subsystems, ``"all"``).

    Without ``smap`` the subsystem ids are taken from the ``score_<id>`` columns.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if smap is not None:
            subs = list(smap.subsystems)
        else:
            subs = [c[len("score_"):] for c in header if c.startswith("score_") and c != "score_global"]
        missing = [c for c in ("window_id", *(f"score_{s}" for s in subs), "score_global") if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        records, labels = [], {t: [] for t in (*subs, GLOBAL)}
        for row in reader:
            records.append(ScoreRecord(int(row["window_id"]), {s: float(row[f"score_{s}"]) for s in subs},
                                       float(row["score_global"])))
            for t in labels:
                labels[t].append(int(row[f"label_{t}"]))
    return records, {t: np.asarray(v) for t, v in labels.items()}
