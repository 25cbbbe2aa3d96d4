"""Loss and validation-Dice curves from a metrics log."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .train import read_metrics  # noqa: E402

# PNG metadata would otherwise embed the matplotlib version string
_PNG_META = {"Software": None}


def epoch_means(rows: list[dict], phase: str) -> dict[str, list[tuple[int, float]]]:
    acc: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["phase"] == phase:
            acc[r["term"]][r["epoch"]].append(r["value"])
    return {term: [(e, sum(v) / len(v)) for e, v in sorted(by_epoch.items())]
            for term, by_epoch in sorted(acc.items())}


def plot_metrics(log_path, out_prefix) -> tuple[Path, Path, int]:
    """Write ``<prefix>_losses.png`` and ``<prefix>_dice.png``.

    Returns both paths and the number of points on the Dice curve.
    """
    rows = read_metrics(log_path)
    if not rows:
        raise ValueError(f"no data in metrics log {log_path}")
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)

    loss_png = out_prefix.with_name(out_prefix.name + "_losses.png")
    phases = [p for p in ("G", "DS", "S") if any(r["phase"] == p for r in rows)]
    fig, axes = plt.subplots(1, max(len(phases), 1), figsize=(5 * max(len(phases), 1), 3.5), squeeze=False)
    for ax, phase in zip(axes[0], phases):
        for term, pts in epoch_means(rows, phase).items():
            if term.startswith("w_"):
                continue
            ax.plot([e + 1 for e, _ in pts], [v for _, v in pts], label=term)
        ax.set_title(f"{phase} phase")
        ax.set_xlabel("epoch")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(loss_png, metadata=_PNG_META)
    plt.close(fig)

    dice_png = out_prefix.with_name(out_prefix.name + "_dice.png")
    val = epoch_means(rows, "val").get("dice_a", [])
    mon = epoch_means(rows, "monitor").get("dice_b", [])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if val:
        ax.plot([e + 1 for e, _ in val], [v for _, v in val], marker="o", ms=3, label="val Dice A")
    if mon:
        ax.plot([e + 1 for e, _ in mon], [v for _, v in mon], marker="s", ms=3, label="Dice B (monitor only)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("Dice")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(dice_png, metadata=_PNG_META)
    plt.close(fig)
    return loss_png, dice_png, len(val)
