#!/usr/bin/env python3
"""Plot a trajectory CSV produced by `sgf simulate`.

Left panel: planar position (x_0, x_1) with the state-constraint circle of
the unicycle scenario and the input trajectory (u_0, u_1). Right panel: the
error channel on a log scale, when present.

Usage: plot_trajectory.py <trajectory.csv> [output.png]
"""

import csv
import math
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main() -> int:
    if len(sys.argv) < 2:
        print(__doc__)
        return 1
    path = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else "trajectory.png"

    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    cols = {name: [float(r[name]) for r in rows] for name in rows[0]}

    has_err = "err" in cols
    fig, axes = plt.subplots(1, 2 if has_err else 1, figsize=(11, 4.5))
    ax0 = axes[0] if has_err else axes

    ax0.plot(cols["x_0"], cols["x_1"], label="state (x_0, x_1)")
    if "u_0" in cols:
        ax0.plot(cols["u_0"], cols["u_1"], "--", label="input u(t)")
    angles = [2 * math.pi * k / 256 for k in range(257)]
    r = math.sqrt(0.9)
    ax0.plot([r * math.cos(a) for a in angles], [r * math.sin(a) for a in angles],
             "k:", linewidth=1, label="|x| = sqrt(0.9)")
    ax0.set_xlabel("x_0")
    ax0.set_ylabel("x_1")
    ax0.axis("equal")
    ax0.legend()

    if has_err:
        axes[1].semilogy(cols["t"], [max(e, 1e-16) for e in cols["err"]])
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("|z - z*|")
        axes[1].grid(True, which="both", alpha=0.3)

    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
