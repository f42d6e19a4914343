"""Figure rendering for the CLI report paths.

Each report writer produces a PNG next to the delimited output.  Figures
are diagnostic companions; the CSV/JSON artifacts remain the machine
contract.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PatchCollection
from matplotlib.patches import Rectangle

_MAX_DRAWN_CUBES = 30_000


def save_domain_figure(d, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    if hasattr(d, "occupancy"):
        ax.imshow(d.occupancy.T, origin="lower", cmap="gray_r",
                  extent=(0, 1, 0, 1), interpolation="nearest")
    else:
        lo, hi = d.obstacles.lo, d.obstacles.hi
        for a, b in zip(lo, hi):
            ax.plot([a[0], b[0]], [a[1], b[1]], "k-", lw=0.4)
        hl, hh = d.hull_lo, d.hull_hi
        ax.plot([hl[0], hh[0], hh[0], hl[0], hl[0]],
                [hl[1], hl[1], hh[1], hh[1], hl[1]], "k-", lw=0.8)
    ax.set_aspect("equal")
    ax.set_title("domain")
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_whitney_figure(W, path):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    if len(W) <= _MAX_DRAWN_CUBES and W.n == 2:
        side = W.side
        lo = W.corner * side[:, None]
        patches = [Rectangle(l, s, s) for l, s in zip(lo, side)]
        col = PatchCollection(patches, edgecolor="k", linewidth=0.25,
                              cmap="viridis")
        col.set_array(W.gen.astype(float))
        ax.add_collection(col)
        ax.autoscale_view()
        fig.colorbar(col, ax=ax, label="generation")
    else:
        counts = W.counts
        js = sorted(counts)
        ax.semilogy(js, [counts[j] for j in js], "o-")
        ax.set_xlabel("generation")
        ax.set_ylabel("cubes")
    ax.set_aspect("equal" if len(W) <= _MAX_DRAWN_CUBES and W.n == 2 else "auto")
    ax.set_title(f"whitney cubes ({len(W)})")
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_chains_figure(cd, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    gens = cd.W.gen
    for j in np.unique(gens):
        axes[0].scatter([j] * (gens == j).sum(), cd.depth[gens == j],
                        s=4, c="C0", alpha=0.15)
    js = np.unique(gens)
    mx = [cd.depth[gens == j].max() for j in js]
    axes[0].plot(js, mx, "C1.-", label="max")
    axes[0].set_xlabel("generation")
    axes[0].set_ylabel("chain length")
    axes[0].legend()
    axes[1].hist(cd.depth, bins=min(60, int(cd.depth.max()) + 1))
    axes[1].set_xlabel("chain length")
    axes[1].set_ylabel("cubes")
    fig.suptitle(f"chains ({cd.strategy})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_condition_figure(report, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    js = [j for j, _, _ in report.per_generation]
    inc = [i for _, i, _ in report.per_generation]
    run = [r for _, _, r in report.per_generation]
    ax.bar(js, inc, color="C0", label="increment")
    ax.plot(js, run, "C1.-", label="running")
    pos = [i for i in inc if i > 0]
    if pos and max(pos) / min(pos) > 50:
        ax.set_yscale("log")
    ax.set_xlabel("generation")
    ax.legend()
    ax.set_title(f"{report.condition}: {report.verdict} "
                 f"(value {report.value:.4e})")
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_sharpness_figure(result, path):
    rows = result["rows"]
    man = result["manifest"]
    m = np.array([r["m"] for r in rows], dtype=float)
    ratio = np.array([r["ratio"] for r in rows])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(m, ratio, "o", label="A_m / B_m")
    ax.loglog(m, ratio[0] * m ** man["target"], "k--",
              label=f"slope {man['target']:g} reference")
    ax.loglog(m, ratio[0] * m ** man["slope"], "C1-",
              label=f"fit slope {man['slope']:.3f}")
    ax.set_xlabel("m")
    ax.set_ylabel("ratio")
    ax.legend()
    ax.set_title("sharpness experiment" + (" PASS" if man["pass"] else " FAIL"))
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_curve_figure(x, y, path, xlabel="", ylabel="", title="", loglog=True):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    (ax.loglog if loglog else ax.plot)(x, y, "o-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.savefig(path, dpi=110)
    plt.close(fig)
