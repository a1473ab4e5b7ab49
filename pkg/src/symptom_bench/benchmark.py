"""Train, score and compare all model kinds on one simulated dataset.

Artifacts per model and seed::

    <out>/<kind>/seed-<s>/checkpoint.zip, history.csv, scores.csv, thresholds.json
    <out>/report.json, report.md

The headline numbers are medians over seeds. Everything in the report can be
recomputed from ``scores.csv`` + ``thresholds.json`` alone.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .config import build
from .dataset import Dataset, SubsystemSignalsMap
from .evaluation import GLOBAL, ThresholdSet, calibrate, metrics, read_scores, score, write_scores
from .simulator import FAULTS, FaultKind
from .trainer import TrainConfig, TrainingDiverged, grid_search, train

log = logging.getLogger(__name__)

MODEL_ORDER = ("gmm", "univariate", "vanilla", "composite")
MODEL_LABELS = {"gmm": "GMM", "univariate": "Univar. TCN-VAE", "vanilla": "Vanilla TCN-VAE", "composite": "Composite (ours)"}


def separation_stats(fault: Sequence[float], healthy: Sequence[float]) -> float:
    """P(fault score > healthy score), ties counted one half (AUC / normalised U)."""
    f = np.asarray(fault, dtype=np.float64)
    h = np.asarray(healthy, dtype=np.float64)
    if f.size == 0 or h.size == 0:
        raise ValueError("separation_stats needs two non-empty groups")
    ranks = rankdata(np.concatenate([f, h]))
    u = ranks[: f.size].sum() - f.size * (f.size + 1) / 2.0
    return float(u / (f.size * h.size))


def summarize(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "mean": float(v.mean())}


@dataclass(frozen=True)
class BenchmarkConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    models: tuple[str, ...] = MODEL_ORDER
    tune: bool = True
    tune_max_epochs: int = 20
    train: Mapping[str, TrainConfig] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "models", tuple(self.models))
        unknown = set(self.models) - set(MODEL_ORDER)
        if unknown:
            raise ValueError(f"unknown model kind(s) {sorted(unknown)}")
        unknown = set(self.train) - set(MODEL_ORDER)
        if unknown:
            raise ValueError(f"unknown model kind(s) under benchmark.train: {sorted(unknown)}")
        cfgs = {}
        for k, v in dict(self.train).items():
            if not isinstance(v, TrainConfig):
                v = build(TrainConfig, {**v, "model_kind": k}, f"benchmark.train.{k}")
            cfgs[k] = v
        for k in self.models:
            cfgs.setdefault(k, TrainConfig(model_kind=k))
        object.__setattr__(self, "train", cfgs)

    def to_json(self) -> dict:
        d = asdict(self)
        d["train"] = {k: v.to_json() for k, v in self.train.items()}
        return d


def targets(smap: SubsystemSignalsMap) -> tuple[str, ...]:
    return (*smap.subsystems, GLOBAL)


def evaluate_run(records, dataset: Dataset) -> dict:
    """Thresholds, metrics, score summaries and separation stats for one trained model."""
    smap = dataset.smap
    labels = {t: dataset.test_labels(t) for t in targets(smap)}
    thresholds, best = calibrate(records, labels)
    kinds = np.array(dataset.test_kinds())
    healthy = kinds == FaultKind.HEALTHY.value
    out = {"thresholds": thresholds, "metrics": {}, "distributions": {}, "separation": {}}
    for t in targets(smap):
        s = np.array([r.get(t) for r in records])
        pred = (s > thresholds.get(t)).astype(int)
        m = metrics(pred, labels[t])
        out["metrics"][t] = {"f1": m.f1, "precision": m.precision, "recall": m.recall,
                             "threshold": thresholds.get(t), "best_f1": best[t].f1}
        out["distributions"][t] = {k.value: summarize(s[kinds == k.value]) for k in FaultKind}
        out["separation"][t] = {k.value: separation_stats(s[kinds == k.value], s[healthy]) for k in FAULTS}
    return out


def recompute_metrics(run_dir: str | Path, smap: SubsystemSignalsMap) -> dict[str, dict[str, float]]:
    """Metrics per target from the persisted ``scores.csv`` and ``thresholds.json``."""
    run_dir = Path(run_dir)
    records, labels = read_scores(run_dir / "scores.csv", smap)
    thr = ThresholdSet.from_json(json.loads((run_dir / "thresholds.json").read_text()))
    out = {}
    for t in targets(smap):
        pred = [int(r.get(t) > thr.get(t)) for r in records]
        m = metrics(pred, labels[t])
        out[t] = {"f1": m.f1, "precision": m.precision, "recall": m.recall}
    return out


def _median_nested(runs: Sequence[Mapping]) -> dict:
    first = runs[0]
    if isinstance(first, Mapping):
        return {k: _median_nested([r[k] for r in runs]) for k in first}
    return float(np.median(runs))


def run_benchmark(dataset: Dataset, cfg: BenchmarkConfig, out_dir: str | Path | None = None) -> dict:
    """Tune (once, on the first seed), train per seed, score, threshold and report.

    A model whose training diverges is recorded as failed; the others proceed.
    """
    t0 = time.time()
    out = Path(out_dir) if out_dir is not None else None
    smap = dataset.smap
    report: dict = {"seeds": list(cfg.seeds), "config": cfg.to_json(), "models": {}}

    for kind in cfg.models:
        entry: dict = {"per_seed": {}}
        report["models"][kind] = entry
        kind_t0 = time.time()
        base = cfg.train[kind]
        try:
            if cfg.tune and base.grid and kind != "gmm":
                tune_cfg = replace(base, seed=cfg.seeds[0], max_epochs=min(base.max_epochs, cfg.tune_max_epochs),
                                   patience=min(base.patience, cfg.tune_max_epochs - 1))
                gs = grid_search(tune_cfg, dataset)
                chosen = {k: v for k, v in gs.best.to_json().items() if k in ("learning_rate", "beta", "batch_size", "model")}
                base = replace(base, **chosen, grid=None)
                entry["tuning"] = {"table": gs.table, "chosen": chosen}
            runs = []
            for seed in cfg.seeds:
                res = train(replace(base, seed=seed, grid=None), dataset)
                records = score(kind, res.model, dataset.test, smap)
                ev = evaluate_run(records, dataset)
                if out is not None:
                    run_dir = out / kind / f"seed-{seed}"
                    res.write(run_dir)
                    write_scores(records, dataset.labels, smap, run_dir / "scores.csv")
                    (run_dir / "thresholds.json").write_text(json.dumps(ev["thresholds"].to_json(), indent=2))
                entry["per_seed"][str(seed)] = {
                    "metrics": ev["metrics"],
                    "separation": ev["separation"],
                    "distributions": ev["distributions"],
                    "best_epoch": res.best_epoch,
                    "best_val_loss": res.best_val_loss,
                }
                runs.append(ev)
                log.info("%s seed %d: %s", kind, seed, {t: round(m["f1"], 3) for t, m in ev["metrics"].items()})
            entry["n_parameters"] = res.model.n_parameters()
            entry["latent_total"] = res.model.latent_total
            entry["median"] = {
                "metrics": _median_nested([r["metrics"] for r in runs]),
                "separation": _median_nested([r["separation"] for r in runs]),
            }
            entry["train_config"] = base.to_json()
        except TrainingDiverged as err:
            log.error("%s failed: %s", kind, err)
            entry["error"] = str(err)
        entry["runtime_s"] = time.time() - kind_t0

    report["runtime_s"] = time.time() - t0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
        (out / "report.md").write_text(render_markdown(report))
    return report


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def render_markdown(report: dict) -> str:
    lines = [
        f"# Benchmark report (median over seeds {report['seeds']})",
        "",
        "| Model | Target | F1 | Precision | Recall |",
        "|---|---|---|---|---|",
    ]
    models = [k for k in MODEL_ORDER if k in report["models"]]
    first = next((report["models"][k] for k in models if "median" in report["models"][k]), None)
    tgts = list(first["median"]["metrics"]) if first else []
    for t in tgts:
        for k in models:
            e = report["models"][k]
            if "median" not in e:
                lines.append(f"| {MODEL_LABELS[k]} | {t} | failed | | |")
                continue
            m = e["median"]["metrics"][t]
            lines.append(f"| {MODEL_LABELS[k]} | {t} | {m['f1']:.3f} | {m['precision']:.3f} | {m['recall']:.3f} |")
    lines += ["", "## Separation from healthy windows (P(fault score > healthy score))", "",
              "| Model | Target | " + " | ".join(f.value for f in FAULTS) + " |",
              "|---|---|" + "---|" * len(FAULTS)]
    for k in models:
        e = report["models"][k]
        if "median" not in e:
            continue
        for t in tgts:
            sep = e["median"]["separation"][t]
            lines.append(f"| {MODEL_LABELS[k]} | {t} | " + " | ".join(f"{sep[f.value]:.3f}" for f in FAULTS) + " |")
    lines += ["", f"Total runtime: {report['runtime_s'] / 60:.1f} min", ""]
    return "\n".join(lines)


def plot_distributions(out_dir: str | Path, smap: SubsystemSignalsMap, seed: int | None = None) -> list[Path]:
    """Box plots of scores per fault scenario, one figure per model."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    report = json.loads((out_dir / "report.json").read_text())
    seed = report["seeds"][0] if seed is None else seed
    written = []
    for kind in report["models"]:
        run_dir = out_dir / kind / f"seed-{seed}"
        if not (run_dir / "scores.csv").exists():
            continue
        records, labels = read_scores(run_dir / "scores.csv", smap)
        kinds = _kinds_from_labels(labels, smap)
        tg = targets(smap)
        fig, axes = plt.subplots(1, len(tg), figsize=(4 * len(tg), 3.5))
        for ax, t in zip(np.atleast_1d(axes), tg):
            s = np.array([r.get(t) for r in records])
            groups = [s[kinds == k.value] for k in FaultKind]
            box = ax.boxplot(groups, patch_artist=True)
            for patch, k in zip(box["boxes"], FaultKind):
                patch.set_facecolor("tab:green" if k.labels[f"label_{t}"] else "tab:blue")
            ax.set_xticks(range(1, len(FaultKind) + 1), ["H", "F1", "F2", "F3", "F4"])
            ax.set_yscale("symlog" if kind == "gmm" else "log")
            ax.set_title(f"{MODEL_LABELS[kind]}: {t}")
        fig.tight_layout()
        path = out_dir / "figures" / f"scores_{kind}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def _kinds_from_labels(labels: Mapping[str, np.ndarray], smap: SubsystemSignalsMap) -> np.ndarray:
    # only valid for the default two-subsystem label table, which is unambiguous
    table = {tuple(k.labels.values()): k.value for k in FaultKind}
    cols = [labels[t] for t in (*smap.subsystems, GLOBAL)]
    return np.array([table[tuple(int(c[i]) for c in cols)] for i in range(len(cols[0]))])
