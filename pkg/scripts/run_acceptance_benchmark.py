"""Run the full-scale benchmark that the acceptance suite reads.

Writes to the same cache directory ``tests/test_acceptance.py`` looks in
(``artifacts/acceptance/<config digest>/`` or ``$SYMPTOM_BENCH_ACCEPTANCE_DIR``),
so running this once up front makes the acceptance tests instant.

    python3 scripts/run_acceptance_benchmark.py [--config configs/benchmark.toml] [--plots]
"""

import argparse
import logging
import os
import time
from pathlib import Path

import torch

from symptom_bench.benchmark import BenchmarkConfig, plot_distributions, run_benchmark
from symptom_bench.config import build, digest, read_toml
from symptom_bench.simulator import SimConfig, build_dataset

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "benchmark.toml")
    ap.add_argument("--plots", action="store_true", help="also render score-distribution figures")
    ap.add_argument("--force", action="store_true", help="rerun even if a report already exists")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(max(1, os.cpu_count() or 1))

    raw = read_toml(args.config)
    sim = build(SimConfig, raw.get("sim", {}), "sim")
    cfg = build(BenchmarkConfig, raw.get("benchmark", {}), "benchmark")
    key = digest({"sim": sim.to_json(), "benchmark": cfg.to_json()})[:16]
    root = Path(os.environ.get("SYMPTOM_BENCH_ACCEPTANCE_DIR", ROOT / "artifacts" / "acceptance"))
    out = root / key
    if (out / "report.json").exists() and not args.force:
        print(f"report already present: {out / 'report.json'}")
    else:
        t0 = time.perf_counter()
        ds = build_dataset(sim)
        run_benchmark(ds, cfg, out)
        print(f"benchmark finished in {(time.perf_counter() - t0) / 60:.1f} min -> {out}")
        if args.plots:
            plot_distributions(out, ds.smap)
    print((out / "report.md").read_text())


if __name__ == "__main__":
    main()
