"""
SVG figures built from sweep CSVs.

Figures are rendered from the CSV alone, so re-plotting a saved sweep
reproduces the same SVG. The hash salt and dropped date metadata keep the
output byte-stable.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from utils.persistence import atomic_write  # noqa: E402

plt.rcParams["svg.hashsalt"] = "reverse-personalization-sandbox"
plt.rcParams["svg.fonttype"] = "path"

_SVG_METADATA = {"Date": None}


def _save(fig, path) -> Path:
    def _write(tmp: str):
        fig.savefig(tmp, format="svg", metadata=_SVG_METADATA)

    try:
        return atomic_write(path, _write)
    finally:
        plt.close(fig)


def _lines(ax, frame: pd.DataFrame, x: str, y: str, group: str, label: str):
    for value, rows in frame.groupby(group, sort=True):
        rows = rows.sort_values(x, kind="mergesort")
        ax.plot(rows[x], rows[y], marker="o", label=f"{label}={value:g}")
    if frame[group].nunique() > 1:
        ax.legend(fontsize="small")


def plot_sweep_panels(csv_path, out_path) -> Path:
    """
    Four panels: re-ID vs lambda_cfg, quality vs lambda_cfg, identity distance
    vs lambda_cfg (one line per lambda_ipa) and re-ID vs lambda_ipa (one line
    per lambda_cfg).
    """
    frame = pd.read_csv(csv_path)
    fig, axes = plt.subplots(2, 2, figsize=(10, 8))

    panels = [
        (axes[0, 0], "lambda_cfg", "reid_rate", "lambda_ipa", "ipa", "Re-ID rate vs guidance scale"),
        (axes[0, 1], "lambda_cfg", "quality", "lambda_ipa", "ipa", "Quality (W2) vs guidance scale"),
        (axes[1, 0], "lambda_cfg", "mean_identity_distance", "lambda_ipa", "ipa",
         "Identity distance vs guidance scale"),
        (axes[1, 1], "lambda_ipa", "reid_rate", "lambda_cfg", "cfg", "Re-ID rate vs adapter scale"),
    ]
    for ax, x, y, group, label, title in panels:
        if not frame.empty:
            _lines(ax, frame, x, y, group, label)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)

    fig.tight_layout()
    return _save(fig, out_path)


def plot_tradeoff(csv_path, out_path) -> Path:
    """Privacy-utility scatter: re-ID against quality and against attribute accuracy."""
    frame = pd.read_csv(csv_path)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))

    for ax, x, title in ((axes[0], "quality", "Re-ID vs quality"),
                         (axes[1], "attr_accuracy", "Re-ID vs attribute accuracy")):
        for _, row in frame.iterrows():
            ax.scatter(row[x], row["reid_rate"], color="tab:blue")
            ax.annotate(f"cfg={row['lambda_cfg']:g}, ipa={row['lambda_ipa']:g}",
                        (row[x], row["reid_rate"]), fontsize="x-small",
                        textcoords="offset points", xytext=(4, 4))
        ax.set_xlabel(x)
        ax.set_ylabel("reid_rate")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)

    fig.tight_layout()
    return _save(fig, out_path)
