"""Command line entry point: simulate, train, evaluate, benchmark, export-observations.

Exit codes: 0 success, 1 invalid input (bad flags, config, data), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .benchmark import BenchmarkConfig, plot_distributions, run_benchmark, targets
from .config import ConfigError, RunManifest, build, check_keys, digest, read_toml, resolve_seed
from .dataset import DatasetError, load_dataset, write_dataset
from .evaluation import (
    ThresholdSet,
    binarize,
    calibrate,
    export_observations,
    read_scores,
    score,
    write_scores,
)
from .models.checkpoint import CheckpointError, load_checkpoint
from .simulator import SimConfig, build_dataset
from .trainer import TrainConfig, TrainingDiverged, grid_search, train

log = logging.getLogger("symptom_bench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are validation errors here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", type=Path, help="TOML config file (defaults apply when omitted)")
    p.add_argument("--out", type=Path, required=True, help=out_help)
    p.add_argument("--seed", type=int, help="overrides the config seed and $SYMPTOM_BENCH_SEED")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symptom-bench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate the synthetic dataset ([sim] section)")
    _common(p, "dataset directory to write")

    p = sub.add_parser("train", help="train one model kind ([train] section; grid search when train.grid is set)")
    _common(p, "runs root; the run lands in <out>/<model_kind>/<timestamp>-<seed>/")
    p.add_argument("--data", type=Path, help="dataset directory (overrides train.data)")

    p = sub.add_parser("evaluate", help="score the test split, calibrate best-F1 thresholds, write observations")
    _common(p, "directory for scores.csv, thresholds.json, metrics.json, observations.jsonl")
    p.add_argument("--data", type=Path, help="dataset directory (overrides evaluate.data)")
    p.add_argument("--checkpoint", type=Path, help="checkpoint archive (overrides evaluate.checkpoint)")

    p = sub.add_parser("benchmark", help="tune, train and evaluate all model kinds ([sim] + [benchmark] sections)")
    _common(p, "benchmark output directory (report.json, report.md, per-run artifacts)")
    p.add_argument("--data", type=Path, help="use an existing dataset directory instead of simulating")
    p.add_argument("--plots", action="store_true", help="also render figures/scores_<model>.png")

    p = sub.add_parser("export-observations", help="binarize scores.csv with thresholds.json into observations.jsonl")
    _common(p, "directory for observations.jsonl")
    p.add_argument("--scores", type=Path, help="scores.csv (overrides export.scores)")
    p.add_argument("--thresholds", type=Path, help="thresholds.json (overrides export.thresholds)")
    return parser


def _section(cfg: dict, name: str, allowed_top: set[str]) -> dict:
    check_keys(cfg, allowed_top, "")
    return dict(cfg.get(name, {}))


def _sim_config(raw: dict, seed: int | None) -> SimConfig:
    sec = dict(raw)
    s = resolve_seed(seed, sec.pop("seed", None))
    return build(SimConfig, sec, "sim", seed=s)


def cmd_simulate(args, raw: dict) -> int:
    sec = _section(raw, "sim", {"sim"})
    cfg = _sim_config(sec, args.seed)
    man = RunManifest("simulate", digest(cfg.to_json()), cfg.to_json(), {}, {"dataset": str(args.out)}, cfg.seed)
    write_dataset(args.out, build_dataset(cfg))
    man.finish(args.out)
    return 0


def _train_config(sec: dict, seed: int | None) -> TrainConfig:
    sec = dict(sec)
    sec.pop("data", None)
    s = resolve_seed(seed, sec.pop("seed", None))
    return build(TrainConfig, sec, "train", seed=s)


def cmd_train(args, raw: dict) -> int:
    sec = _section(raw, "train", {"train"})
    data = args.data or (Path(sec["data"]) if "data" in sec else None)
    if data is None:
        raise ConfigError("no dataset: pass --data or set train.data")
    cfg = _train_config(sec, args.seed)
    ds = load_dataset(data)
    extra = {}
    if cfg.grid:
        gs = grid_search(cfg, ds)
        res, extra = gs.best_result, {"grid": gs.table}
    else:
        res = train(cfg, ds)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    run_dir = args.out / cfg.model_kind / f"{stamp}-{cfg.seed}"
    res.write(run_dir)
    summary = {"best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss,
               "n_parameters": res.model.n_parameters(), "latent_total": res.model.latent_total,
               "chosen_config": res.config.to_json(), **extra}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    RunManifest("train", digest(cfg.to_json()), cfg.to_json(), {"data": str(data)},
                {"run_dir": str(run_dir)}, cfg.seed).finish(run_dir)
    print(run_dir)
    return 0


def cmd_evaluate(args, raw: dict) -> int:
    sec = _section(raw, "evaluate", {"evaluate"})
    check_keys(sec, {"data", "checkpoint", "seed"}, "evaluate")
    data = args.data or (Path(sec["data"]) if "data" in sec else None)
    ckpt = args.checkpoint or (Path(sec["checkpoint"]) if "checkpoint" in sec else None)
    if data is None or ckpt is None:
        raise ConfigError("evaluate needs a dataset (--data / evaluate.data) and a checkpoint (--checkpoint / evaluate.checkpoint)")
    seed = resolve_seed(args.seed, sec.get("seed"))
    ds = load_dataset(data)
    model = load_checkpoint(ckpt, smap=ds.smap)
    records = score(model.kind, model, ds.test, ds.smap)
    labels = {t: ds.test_labels(t) for t in targets(ds.smap)}
    thresholds, results = calibrate(records, labels)
    out = args.out
    write_scores(records, ds.labels, ds.smap, out / "scores.csv")
    (out / "thresholds.json").write_text(json.dumps(thresholds.to_json(), indent=2))
    (out / "metrics.json").write_text(json.dumps({t: vars(r) for t, r in results.items()}, indent=2))
    export_observations(binarize(records, thresholds), out / "observations.jsonl")
    conf = {"data": str(data), "checkpoint": str(ckpt)}
    RunManifest("evaluate", digest(conf), conf, conf, {"dir": str(out)}, seed).finish(out)
    return 0


def cmd_benchmark(args, raw: dict) -> int:
    check_keys(raw, {"sim", "benchmark"}, "")
    bsec = dict(raw.get("benchmark", {}))
    if args.seed is not None:
        bsec["seeds"] = [args.seed]
    bench = build(BenchmarkConfig, bsec, "benchmark")
    if args.data:
        ds = load_dataset(args.data)
        sim_conf = {"data": str(args.data)}
    else:
        sim = _sim_config(dict(raw.get("sim", {})), None)
        ds = build_dataset(sim)
        sim_conf = sim.to_json()
    conf = {"sim": sim_conf, "benchmark": bench.to_json()}
    man = RunManifest("benchmark", digest(conf), conf, {}, {"dir": str(args.out)}, bench.seeds[0])
    run_benchmark(ds, bench, args.out)
    if args.plots:
        plot_distributions(args.out, ds.smap)
    man.finish(args.out)
    return 0


def cmd_export(args, raw: dict) -> int:
    sec = _section(raw, "export", {"export"})
    check_keys(sec, {"scores", "thresholds"}, "export")
    scores_path = args.scores or (Path(sec["scores"]) if "scores" in sec else None)
    thr_path = args.thresholds or (Path(sec["thresholds"]) if "thresholds" in sec else None)
    if scores_path is None or thr_path is None:
        raise ConfigError("export-observations needs --scores and --thresholds (or export.scores / export.thresholds)")
    thr = ThresholdSet.from_json(json.loads(Path(thr_path).read_text()))
    records, _ = read_scores(scores_path)
    export_observations(binarize(records, thr), args.out / "observations.jsonl")
    conf = {"scores": str(scores_path), "thresholds": str(thr_path)}
    RunManifest("export-observations", digest(conf), conf, conf, {"dir": str(args.out)},
                resolve_seed(args.seed, None)).finish(args.out)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "export-observations": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        raw = read_toml(args.config)
        return COMMANDS[args.command](args, raw)
    except (ConfigError, DatasetError, CheckpointError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TrainingDiverged, OSError, RuntimeError, FloatingPointError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
