"""Dice / delta-Dice metrics, per-case evaluation and report emission."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DomainStore

DICE_EPS = 1e-6
METHODS = ("coSegGAN", "coSegGAN--", "baseline_decoupled")
RESULT_COLUMNS = ("method", "case", "domain_a", "domain_b", "dice_a", "dice_b", "delta_dice")


def dice(pred, truth, threshold: float = 0.5) -> np.ndarray:
    """Per-frame smoothed Dice after binarizing ``pred`` at ``threshold``.

    Accepts torch tensors or arrays shaped (N, ...) with a leading frame
    axis. Empty prediction on an empty mask scores 1.
    """
    pred = torch.as_tensor(pred, dtype=torch.float64)
    truth = torch.as_tensor(truth, dtype=torch.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"dice: shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    p = (pred >= threshold).flatten(1).double()
    t = (truth >= 0.5).flatten(1).double()
    inter = (p * t).sum(1)
    scores = (2.0 * inter + DICE_EPS) / (p.sum(1) + t.sum(1) + DICE_EPS)
    return scores.numpy()


def delta_dice(dice_a: float, dice_b: float) -> float:
    return abs(dice_a - dice_b)


@torch.no_grad()
def predict(seg: torch.nn.Module, images: torch.Tensor, batch: int = 32) -> torch.Tensor:
    was_training = seg.training
    seg.eval()
    out = torch.cat([seg(images[i:i + batch]) for i in range(0, images.shape[0], batch)])
    seg.train(was_training)
    return out


def mean_dice(seg: torch.nn.Module, store: DomainStore, threshold: float = 0.5) -> float:
    if not store.has_masks:
        raise ValueError(f"domain {store.name} has no masks to score against")
    return float(dice(predict(seg, store.images), store.masks, threshold).mean())


@dataclass
class EvalReport:
    case: str
    domain_a: str
    domain_b: str
    method: str
    per_frame_a: list[float]
    per_frame_b: list[float]
    dice_a: float = 0.0
    dice_b: float = 0.0
    delta_dice: float = 0.0
    metadata: dict = field(default_factory=dict)
    # (domain, stem, image CHW, prob 1HW, truth 1HW) for qualitative overlays
    samples: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.dice_a = float(np.mean(self.per_frame_a))
        self.dice_b = float(np.mean(self.per_frame_b))
        self.delta_dice = delta_dice(self.dice_a, self.dice_b)

    def row(self) -> dict:
        return {"method": self.method, "case": self.case, "domain_a": self.domain_a,
                "domain_b": self.domain_b, "dice_a": self.dice_a, "dice_b": self.dice_b,
                "delta_dice": self.delta_dice}

    def to_json(self) -> dict:
        d = self.row()
        d.update(per_frame_a=self.per_frame_a, per_frame_b=self.per_frame_b, metadata=self.metadata)
        return d


def evaluate_segmenter(seg: torch.nn.Module, store_a: DomainStore, store_b: DomainStore,
                       method: str, case: str = "1", threshold: float = 0.5,
                       n_samples: int = 4, metadata: dict | None = None) -> EvalReport:
    for store in (store_a, store_b):
        if not store.has_masks:
            raise ValueError(f"test domain {store.name} has no masks; evaluation needs ground truth")
    pa = predict(seg, store_a.images)
    pb = predict(seg, store_b.images)
    samples = []
    for tag, store, probs in (("A", store_a, pa), ("B", store_b, pb)):
        for i in range(min(n_samples, store.frame_count)):
            samples.append((tag, store.stems[i], store.images[i], probs[i], store.masks[i]))
    return EvalReport(
        case=str(case), domain_a=store_a.name, domain_b=store_b.name, method=method,
        per_frame_a=dice(pa, store_a.masks, threshold).tolist(),
        per_frame_b=dice(pb, store_b.masks, threshold).tolist(),
        metadata=dict(metadata or {}, threshold=threshold,
                      frames_a=store_a.frame_count, frames_b=store_b.frame_count),
        samples=samples,
    )


def evaluate_case(checkpoint, store_a: DomainStore, store_b: DomainStore, method: str | None = None,
                  case: str = "1", threshold: float = 0.5, n_samples: int = 4) -> EvalReport:
    """Score the checkpoint's segmenter on labelled-domain and unlabelled-domain test sets."""
    from .train import load_segmenter

    seg, meta = load_segmenter(checkpoint)
    method = method or meta.get("method") or "coSegGAN"
    return evaluate_segmenter(seg, store_a, store_b, method, case, threshold, n_samples,
                              metadata={"checkpoint": str(checkpoint), **meta})


def results_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([row["method"], row["case"], row["domain_a"], row["domain_b"],
                    f"{row['dice_a']:.4f}", f"{row['dice_b']:.4f}", f"{row['delta_dice']:.4f}"])
    return buf.getvalue()


def results_table(reports: list[EvalReport]) -> str:
    """Plain-text table in percent, one row per (method, case)."""
    header = ("Method", "Case", "Domain A", "Domain B (unlabelled)", "Dice A", "Dice B", "Delta Dice")
    rows = [(r.method, r.case, r.domain_a, r.domain_b, f"{100 * r.dice_a:.1f}%",
             f"{100 * r.dice_b:.1f}%", f"{100 * r.delta_dice:.1f}%") for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = " | ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), "-+-".join("-" * w for w in widths)]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def _to_uint8(img: torch.Tensor) -> np.ndarray:
    return np.round((img.permute(1, 2, 0).numpy() + 1.0) * 127.5).clip(0, 255).astype(np.uint8)


def overlay(image: torch.Tensor, prob: torch.Tensor, truth: torch.Tensor, threshold: float = 0.5) -> np.ndarray:
    """Side by side: input | prediction tint | ground truth tint (green TP, red FP, blue FN)."""
    base = _to_uint8(image).astype(np.float32)
    p = (prob[0].numpy() >= threshold)
    t = truth[0].numpy() >= 0.5
    colors = np.zeros_like(base)
    colors[p & t] = (0, 255, 0)
    colors[p & ~t] = (255, 0, 0)
    colors[~p & t] = (0, 0, 255)
    tinted = np.where((p | t)[..., None], 0.5 * base + 0.5 * colors, base)
    truth_rgb = np.repeat((t * 255).astype(np.float32)[..., None], 3, axis=2)
    return np.concatenate([base, tinted, truth_rgb], axis=1).astype(np.uint8)


def emit_report(reports: list[EvalReport], out, metrics_logs: dict | None = None) -> dict[str, Path]:
    """Write results.csv, results.json, results.txt, overlays/ and loss curves."""
    from PIL import Image

    if not reports:
        raise ValueError("emit_report needs at least one report")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "json": out / "results.json", "table": out / "results.txt"}
    paths["csv"].write_text(results_csv(reports))
    paths["json"].write_text(json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True))
    paths["table"].write_text(results_table(reports))

    ov_dir = out / "overlays"
    ov_dir.mkdir(exist_ok=True)
    for r in reports:
        for tag, stem, img, prob, truth in r.samples:
            name = f"{r.case}_{r.method}_{tag}{stem}.png"
            Image.fromarray(overlay(img, prob, truth)).save(ov_dir / name)
    paths["overlays"] = ov_dir

    if metrics_logs:
        from .plots import plot_metrics

        for label, log_path in metrics_logs.items():
            if Path(log_path).exists():
                paths[f"curves_{label}"] = plot_metrics(log_path, out / f"curves_{label}")[0]
    return paths
