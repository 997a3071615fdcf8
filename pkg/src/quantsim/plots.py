"""Figure rendering for the report paths.

Everything draws to PNG files with the Agg backend; nothing here opens a
window. Figures sit next to the delimited output they visualize, so a run
directory is self-contained.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["loss_curve", "layer_errors", "effect_stats", "scaler_comparison"]

_DPI = 120


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def loss_curve(history, path: str) -> None:
    """history: (step, block, loss) rows, steps counted per block."""
    blocks = sorted({b for _, b, _ in history})
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for b in blocks:
        steps = [s for s, bb, _ in history if bb == b]
        losses = [l for _, bb, l in history if bb == b]
        ax.plot(steps, losses, label=f"block {b}", linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("block MSE")
    ax.legend(frameon=False)
    _save(fig, path)


def layer_errors(reports, path: str) -> None:
    """Measured product error per layer against its upper bound."""
    names = [r.layer for r in reports]
    pos = np.arange(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(names) + 2.0), 3.8))
    ax.bar(pos - width / 2, [r.total_error for r in reports], width, label="measured")
    ax.bar(pos + width / 2, [r.bound_rhs for r in reports], width, label="bound")
    ax.set_yscale("log")
    ax.set_xticks(pos, names, rotation=30, ha="right")
    ax.set_ylabel("L1 product error")
    ax.legend(frameon=False)
    _save(fig, path)


def effect_stats(stats, path: str) -> None:
    """Range effects of scaling per layer: proportion dilated, delta ratios."""
    names = [st.layer for st in stats]
    pos = np.arange(len(names))
    width = 0.28
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(names) + 2.0), 3.8))
    ax.bar(pos - width, [st.prop_s_gt_1 for st in stats], width, label="prop s > 1")
    ax.bar(pos, [st.dx_ratio for st in stats], width, label="act delta ratio")
    ax.bar(pos + width, [st.dw_ratio for st in stats], width, label="weight delta ratio")
    ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
    ax.set_xticks(pos, names, rotation=30, ha="right")
    ax.set_ylabel("ratio / proportion")
    ax.legend(frameon=False)
    _save(fig, path)


def scaler_comparison(reports_by_arm: dict, path: str) -> None:
    """Grouped per-layer total error, one bar group per scaling approach."""
    arms = list(reports_by_arm)
    names = [r.layer for r in reports_by_arm[arms[0]]]
    pos = np.arange(len(names))
    width = 0.8 / max(len(arms), 1)
    fig, ax = plt.subplots(figsize=(max(5.0, 1.3 * len(names) + 2.0), 3.8))
    for i, arm in enumerate(arms):
        vals = [r.total_error for r in reports_by_arm[arm]]
        ax.bar(pos + (i - (len(arms) - 1) / 2) * width, vals, width, label=arm)
    ax.set_yscale("log")
    ax.set_xticks(pos, names, rotation=30, ha="right")
    ax.set_ylabel("L1 product error")
    ax.legend(frameon=False)
    _save(fig, path)
