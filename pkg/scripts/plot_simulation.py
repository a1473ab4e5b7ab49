"""Plot one healthy window next to one window of each fault kind.

    python3 scripts/plot_simulation.py [--out figures/simulation.png] [--seed 0]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from symptom_bench.simulator import FAULTS, SIGNALS, FaultKind, SimConfig, simulate_windows  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("figures/simulation.png"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = SimConfig(seed=args.seed)
    kinds = [FaultKind.HEALTHY, *FAULTS]
    fig, axes = plt.subplots(len(SIGNALS), len(kinds), figsize=(3 * len(kinds), 1.6 * len(SIGNALS)),
                             sharex=True, sharey="row")
    for j, kind in enumerate(kinds):
        w = simulate_windows(cfg, 1, kind, split="test")[0]  # raw (unstandardized) units
        for i, name in enumerate(SIGNALS):
            ax = axes[i, j]
            ax.plot(w[:, i], lw=0.8)
            if i == 0:
                ax.set_title(kind.value, fontsize=9)
            if j == 0:
                ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
