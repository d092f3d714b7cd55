"""Figure rendering for the command-line reports.

Every command that writes delimited output also drops a PNG next to it:
training curves beside the epoch log, a metric summary beside evaluation
results, and the trajectory paths beside a hypothesis file. Figures use
the non-interactive Agg backend and carry no metadata so identical runs
produce identical bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .data import Detection
from .fileio import atomic_write_bytes
from .metrics import EvalResult
from .model import EpochLog

_SAVE_OPTS = {"format": "png", "dpi": 110, "metadata": {"Software": None}}


def _save(fig, path: str | Path) -> None:
    buffer = io.BytesIO()
    fig.savefig(buffer, **_SAVE_OPTS)
    plt.close(fig)
    atomic_write_bytes(path, buffer.getvalue())


def save_training_curves(logs: list[EpochLog], path: str | Path) -> None:
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(9, 3.4))
    if logs:
        epochs = [log.epoch for log in logs]
        ax_loss.plot(epochs, [log.mean_loss for log in logs], label="mean", linewidth=2)
        for key in ("forward", "backward", "consistency", "assembly"):
            ax_loss.plot(epochs, [getattr(log, key) for log in logs], label=key, alpha=0.7)
        ax_lr.step(epochs, [log.lr for log in logs], where="post")
        ax_lr.set_yscale("log")
        ax_loss.legend(fontsize=8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("learning rate")
    fig.tight_layout()
    _save(fig, path)


def save_eval_summary(result: EvalResult, path: str | Path) -> None:
    percent = {k: getattr(result, k.lower()) for k in ("MOTA", "MOTAL", "MOTP", "Rcll", "IDF1", "MT", "ML")}
    counts = {"FP": result.fp, "FN": result.fn, "ID_Sw": result.id_sw, "Frag": result.frag}
    fig, ax = plt.subplots(figsize=(7, 3.4))
    names = list(percent)
    values = [percent[k] for k in names]
    bars = ax.bar(names, values, color="#4878b0")
    ax.axhline(100, color="gray", linewidth=0.8, linestyle=":")
    ax.set_ylabel("percent")
    ax.set_ylim(min(0, min(values) * 1.1), 110)
    for bar, value in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, value, f"{value:.1f}",
                ha="center", va="bottom", fontsize=8)
    ax.set_title("   ".join(f"{k}={v}" for k, v in counts.items()), fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def save_track_paths(records: list[Detection], frame_size: tuple[int, int], path: str | Path) -> None:
    """Center trajectories of every hypothesis id over the frame canvas."""
    width, height = frame_size
    by_id: dict[int, list[tuple[int, float, float]]] = {}
    for row in records:
        by_id.setdefault(row.id, []).append(
            (row.frame, row.left + row.width / 2, row.top + row.height / 2))
    fig, ax = plt.subplots(figsize=(5, 5 * height / max(width, 1)))
    cmap = plt.get_cmap("tab20")
    for index, (ident, points) in enumerate(sorted(by_id.items())):
        points.sort()
        xs = [p[1] for p in points]
        ys = [p[2] for p in points]
        ax.plot(xs, ys, "-", color=cmap(index % 20), linewidth=1.2, label=str(ident))
        ax.plot(xs[:1], ys[:1], "o", color=cmap(index % 20), markersize=3)
    ax.set_xlim(0, width)
    ax.set_ylim(height, 0)
    ax.set_aspect("equal")
    ax.set_title(f"{len(by_id)} tracks")
    if 0 < len(by_id) <= 12:
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    _save(fig, path)
