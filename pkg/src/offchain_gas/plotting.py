"""Figures for the sweep and policy commands.

Everything renders through the Agg backend straight to a file; nothing is
shown interactively.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (5 ** 0.5 - 1) / 2
FIG_WIDTH = 5.0

COLORS = ["#1b6ca8", "#d1495b", "#edae49", "#66a182", "#2e4057"]

PARAMS = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.family": "sans-serif",
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [FIG_WIDTH, FIG_WIDTH * GOLDEN],
    "figure.dpi": 150,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "svg.hashsalt": "offchain-gas",
}

# keeps PNG/PDF bytes stable between runs
_METADATA = {
    ".png": {"Software": None},
    ".pdf": {"Creator": None, "Producer": None, "CreationDate": None},
    ".svg": {"Creator": None, "Date": None},
}


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_METADATA.get(path.suffix.lower()))
    plt.close(fig)
    return path


def sweep_figure(ks: Sequence[int], m2: Sequence[float], m3: Sequence[float],
                 baseline: float, path: Union[str, Path], title: str = "") -> Path:
    """Amortized gas per transfer against the upload interval."""
    with plt.rc_context(PARAMS):
        fig, ax = plt.subplots()
        ax.plot(ks, m2, marker="o", label="M2 batched")
        ax.plot(ks, m3, marker="s", label="M3 off-chain state")
        ax.axhline(baseline, color="0.4", linestyle="--", linewidth=1, label="M1 baseline")
        ax.set_xlabel("upload interval k (blocks)")
        ax.set_ylabel("amortized gas per transfer")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def policy_figure(names: Sequence[str], normalized: Sequence[float], delays: Sequence[float],
                  path: Union[str, Path], title: str = "") -> Path:
    """Normalized cost and average settlement delay side by side per policy."""
    with plt.rc_context(PARAMS):
        fig, (left, right) = plt.subplots(1, 2, figsize=(FIG_WIDTH * 1.4, FIG_WIDTH * GOLDEN))
        x = range(len(names))
        left.bar(x, normalized, color=COLORS[0])
        left.axhline(1.0, color="0.4", linestyle="--", linewidth=1)
        left.set_ylabel("normalized cost")
        right.bar(x, delays, color=COLORS[1])
        right.set_ylabel("average delay (blocks)")
        for ax in (left, right):
            ax.set_xticks(list(x))
            ax.set_xticklabels(names, rotation=30, ha="right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)
