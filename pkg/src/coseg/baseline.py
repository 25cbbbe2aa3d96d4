"""Decoupled two-stage baseline: translate first, segment afterwards.

Stage 1 trains the translation system alone (no segmenter, no shape term).
Stage 2 freezes it, translates every labelled training image once, and
trains a fresh segmenter on the originals plus their translations.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .data import DomainStore, sample_epoch
from .evaluation import mean_dice
from .losses import focal_loss
from .nets import SegmenterSpec, UNetSegmenter
from .train import (MetricsLog, TrainConfig, TrainState, epoch_seed, load_checkpoint,
                    save_checkpoint, set_determinism, train_step)

log = logging.getLogger(__name__)

METHOD = "baseline_decoupled"


def train_translator(cfg: TrainConfig, store_a: DomainStore, store_b: DomainStore, epochs: int,
                     out_dir: Path) -> Path:
    """Stage 1: plain cycle-consistent translation, shape weight forced to 0."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "stage1_metrics.csv").unlink(missing_ok=True)
    stage_cfg = replace(cfg, epochs=epochs, weights=replace(cfg.weights, lambda3=0.0),
                        checkpoint_dir=str(out_dir / "stage1"))
    state = TrainState.create(stage_cfg, with_segmenter=False, method=METHOD)
    with MetricsLog(out_dir / "stage1_metrics.csv") as metrics:
        for epoch in range(epochs):
            state.epoch = epoch
            for batch in sample_epoch(store_a, store_b.without_masks(), cfg.batch,
                                      epoch_seed(cfg.seed, epoch)):
                train_step(state, batch, metrics)
            metrics.flush()
            log.info("baseline stage 1 epoch %d/%d", epoch + 1, epochs)
        state.epoch = epochs
    return save_checkpoint(state, out_dir / "translator.pt")


@torch.no_grad()
def translate(generator: torch.nn.Module, images: torch.Tensor, batch: int = 32) -> torch.Tensor:
    generator.eval()
    return torch.cat([generator(images[i:i + batch]) for i in range(0, images.shape[0], batch)])


def train_segmenter(cfg: TrainConfig, images: torch.Tensor, masks: torch.Tensor, val_a: DomainStore,
                    metrics: MetricsLog | None = None) -> tuple[UNetSegmenter, torch.optim.Adam, float]:
    """Stage 2: focal-loss segmenter on a fixed image set; returns the best-val weights."""
    set_determinism(cfg.seed, cfg.deterministic)
    torch.manual_seed(cfg.seed)
    seg = UNetSegmenter(SegmenterSpec(cfg.image_size, cfg.seg_filters))
    opt = torch.optim.Adam(seg.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))
    best, best_state = -np.inf, None
    n = images.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(np.random.default_rng([cfg.seed, 7, epoch]).permutation(n))
        for k in range(0, n, cfg.batch):
            idx = order[k:k + cfg.batch]
            opt.zero_grad(set_to_none=True)
            loss = focal_loss(seg(images[idx]), masks[idx], cfg.weights.gamma, cfg.weights.alpha)
            loss.backward()
            opt.step()
            step += 1
            if metrics is not None:
                metrics.write(step, epoch, "S", {"foc": loss.item()})
        score = mean_dice(seg, val_a)
        if metrics is not None:
            metrics.write(step, epoch, "val", {"dice_a": score})
            metrics.flush()
        log.info("baseline stage 2 epoch %d/%d  val dice A %.4f", epoch + 1, cfg.epochs, score)
        if score > best:
            best = score
            best_state = copy.deepcopy((seg.state_dict(), opt.state_dict()))
    seg.load_state_dict(best_state[0])
    opt.load_state_dict(best_state[1])
    return seg, opt, best


def run_baseline_decoupled(cfg: TrainConfig, store_a: DomainStore, store_b: DomainStore,
                           val_a: DomainStore, translation_epochs: int = 50) -> Path:
    """Both stages; returns a checkpoint holding the frozen translator and the best segmenter."""
    out = Path(cfg.checkpoint_dir)
    translator_path = train_translator(cfg, store_a, store_b, translation_epochs, out)
    state = load_checkpoint(translator_path)

    fake_b = translate(state.nets["g_b"], store_a.images)
    images = torch.cat([store_a.images, fake_b])
    masks = torch.cat([store_a.masks, store_a.masks])
    (out / "metrics.csv").unlink(missing_ok=True)
    with MetricsLog(out / "metrics.csv") as metrics:
        seg, opt, best = train_segmenter(cfg, images, masks, val_a, metrics)

    state.nets["seg"] = seg
    state.optimizers["seg"] = opt
    state.best_val_dice = best
    state.cfg = replace(state.cfg, epochs=cfg.epochs)
    return save_checkpoint(state, out / "best.pt")
