"""Alternating joint training of translators, discriminators and segmenter.

Each batch runs two phases:

* generator phase: G_A and G_B minimise the weighted translator objective
  while D_A, D_B and S are frozen;
* critic phase: with both generators frozen, D_A and D_B take a
  least-squares step and S takes a focal-loss step on real and
  freshly translated domain-A images.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import random
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import DomainStore, UnpairedBatch, sample_epoch
from .evaluation import mean_dice
from .losses import (LossWeights, gan_loss_discriminator, generator_total_loss,
                     segmentation_loss)
from .nets import (DiscriminatorSpec, Generator, GeneratorSpec, PatchDiscriminator,
                   SegmenterSpec, UNetSegmenter)

log = logging.getLogger(__name__)

NET_NAMES = ("g_a", "g_b", "d_a", "d_b", "seg")
GENERATORS = ("g_a", "g_b")
CRITICS = ("d_a", "d_b", "seg")
CHECKPOINT_FORMAT = "coseg-checkpoint/1"


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 8
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    ablation_no_structure: bool = False
    image_size: int = 256
    gen_channels: int = 64
    disc_channels: int = 64
    disc_layers: int = 4
    seg_filters: int = 16
    image_pool: int = 0          # discriminator history buffer size, 0 disables
    grad_clip: float | None = None
    deterministic: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.ablation_no_structure:
            self.weights = self.weights.ablated()
        elif self.weights.lambda4 == 0:
            self.ablation_no_structure = True
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch >= 1 and lr > 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def set_determinism(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)


def build_networks(cfg: TrainConfig, with_segmenter: bool = True) -> dict[str, nn.Module]:
    """Fresh, seeded networks. Initialisation order is fixed for reproducibility."""
    torch.manual_seed(cfg.seed)
    gspec = GeneratorSpec(cfg.image_size, cfg.gen_channels)
    dspec = DiscriminatorSpec(cfg.image_size, cfg.disc_channels, cfg.disc_layers)
    nets = {
        "g_a": Generator(gspec),
        "g_b": Generator(gspec),
        "d_a": PatchDiscriminator(dspec),
        "d_b": PatchDiscriminator(dspec),
    }
    if with_segmenter:
        nets["seg"] = UNetSegmenter(SegmenterSpec(cfg.image_size, cfg.seg_filters))
    return nets


def make_optimizers(cfg: TrainConfig, nets: dict[str, nn.Module]) -> dict[str, torch.optim.Adam]:
    return {name: torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))
            for name, net in nets.items()}


class ImagePool:
    """History of generated images for the discriminator (off unless size > 0)."""

    def __init__(self, size: int, seed: int = 0):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = np.random.default_rng(seed)

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return batch
        out = []
        for img in batch:
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                k = int(self.rng.integers(self.size))
                out.append(self.images[k].clone())
                self.images[k] = img.clone()
            else:
                out.append(img)
        return torch.cat(out)


class MetricsLog:
    """Append-only CSV: step, epoch, phase, term, value."""

    HEADER = ("step", "epoch", "phase", "term", "value")

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._w.writerow(self.HEADER)

    def write(self, step: int, epoch: int, phase: str, terms: dict[str, float]):
        for name in sorted(terms):
            self._w.writerow((step, epoch, phase, name, repr(float(terms[name]))))

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["step"] = int(r["step"])
        r["epoch"] = int(r["epoch"])
        r["value"] = float(r["value"])
    return rows


@dataclass
class TrainState:
    cfg: TrainConfig
    nets: dict[str, nn.Module]
    optimizers: dict[str, torch.optim.Adam]
    epoch: int = 0
    step: int = 0
    best_val_dice: float = -math.inf
    method: str = "coSegGAN"
    pools: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: TrainConfig, with_segmenter: bool = True, method: str | None = None) -> "TrainState":
        set_determinism(cfg.seed, cfg.deterministic)
        nets = build_networks(cfg, with_segmenter)
        if method is None:
            method = "coSegGAN--" if cfg.ablation_no_structure else "coSegGAN"
        state = cls(cfg, nets, make_optimizers(cfg, nets), method=method)
        state.pools = {k: ImagePool(cfg.image_pool, cfg.seed + i) for i, k in enumerate(("a", "b"))}
        return state

    @property
    def seg(self) -> nn.Module | None:
        return self.nets.get("seg")


def _check_finite(terms: dict[str, torch.Tensor | float], phase: str):
    for name, value in terms.items():
        value = value.item() if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(value):
            raise NonFiniteLossError(f"non-finite loss in {phase} phase: term '{name}' = {value}")


def _clip(cfg: TrainConfig, nets: list[nn.Module]):
    if cfg.grad_clip:
        params = [p for n in nets for p in n.parameters()]
        norm = torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        if norm > cfg.grad_clip:
            log.debug("gradient clipped (norm %.3g)", float(norm))


def generator_phase(state: TrainState, batch: UnpairedBatch) -> dict[str, float]:
    """One Adam step on G_A and G_B; D_A, D_B and S receive no gradient."""
    cfg, nets = state.cfg, state.nets
    for net in nets.values():
        net.zero_grad(set_to_none=True)
    total, terms = generator_total_loss(nets["g_a"], nets["g_b"], nets["d_a"], nets["d_b"], state.seg,
                                        batch.x_a, batch.x_b, batch.y_a, cfg.weights)
    _check_finite(terms, "generator")
    total.backward()
    _clip(cfg, [nets[k] for k in GENERATORS])
    for k in GENERATORS:
        state.optimizers[k].step()
    lam = cfg.weights.generator_lambdas()
    terms.update({f"w_{k}": lam[k] * terms[k] for k in lam})
    return terms


def critic_phase(state: TrainState, batch: UnpairedBatch) -> dict[str, float]:
    """One Adam step each on D_A, D_B and S with the generators frozen."""
    cfg, nets = state.cfg, state.nets
    for net in nets.values():
        net.zero_grad(set_to_none=True)
    with torch.no_grad():
        fake_b = nets["g_b"](batch.x_a)
        fake_a = nets["g_a"](batch.x_b)
    terms_t = {
        "d_a": gan_loss_discriminator(nets["d_a"], batch.x_a, state.pools["a"].query(fake_a)),
        "d_b": gan_loss_discriminator(nets["d_b"], batch.x_b, state.pools["b"].query(fake_b)),
    }
    terms: dict[str, float] = {}
    if state.seg is not None:
        terms_t["seg_total"] = segmentation_loss(state.seg, nets["g_b"], batch.x_a, batch.y_a,
                                                 cfg.weights, fake_b=fake_b, breakdown=terms)
    _check_finite(terms_t, "critic")
    sum(terms_t.values()).backward()
    active = [k for k in CRITICS if k in nets]
    for k in active:
        _clip(cfg, [nets[k]])
        state.optimizers[k].step()
    terms.update({k: v.item() for k, v in terms_t.items()})
    return terms


def train_step(state: TrainState, batch: UnpairedBatch, metrics: MetricsLog | None = None) -> TrainState:
    g_terms = generator_phase(state, batch)
    c_terms = critic_phase(state, batch)
    state.step += 1
    if metrics is not None:
        metrics.write(state.step, state.epoch, "G", g_terms)
        metrics.write(state.step, state.epoch, "DS", c_terms)
    return state


# --------------------------------------------------------------------------
# checkpoints

def manifest(nets: dict[str, nn.Module]) -> dict[str, dict[str, list[int]]]:
    """Network name -> parameter name -> shape."""
    return {name: {k: list(v.shape) for k, v in net.state_dict().items()} for name, net in nets.items()}


def state_dict(state: TrainState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "method": state.method,
        "epoch": state.epoch,
        "step": state.step,
        "best_val_dice": state.best_val_dice,
        "config": state.cfg.to_dict(),
        "manifest": manifest(state.nets),
        "nets": {k: v.state_dict() for k, v in state.nets.items()},
        "optimizers": {k: v.state_dict() for k, v in state.optimizers.items()},
    }


def _canonical(obj):
    """Sorted keys, interned strings and unshared tensor copies.

    Pickle memoizes by object identity, so without this a state restored
    from disk would serialize to different bytes than the original.
    """
    if isinstance(obj, dict):
        keys = sorted(obj, key=lambda k: (type(k).__name__, k))
        return {_canonical(k): _canonical(obj[k]) for k in keys}
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_canonical(v) for v in obj)
    if isinstance(obj, torch.Tensor):
        return obj.detach().clone().contiguous()
    return obj


def save_checkpoint(state: TrainState, path) -> Path:
    """Atomic write (temp file + rename) of every network, optimizer and counter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(_canonical(state_dict(state)), buf)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def _read(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a coseg checkpoint")
    return ckpt


def load_checkpoint(path) -> TrainState:
    ckpt = _read(path)
    cfg = TrainConfig.from_dict(ckpt["config"])
    nets = build_networks(cfg, with_segmenter="seg" in ckpt["nets"])
    for k, sd in ckpt["nets"].items():
        nets[k].load_state_dict(sd)
    opts = make_optimizers(cfg, nets)
    for k, sd in ckpt["optimizers"].items():
        opts[k].load_state_dict(sd)
    state = TrainState(cfg, nets, opts, epoch=ckpt["epoch"], step=ckpt["step"],
                       best_val_dice=ckpt["best_val_dice"], method=ckpt["method"])
    state.pools = {k: ImagePool(cfg.image_pool, cfg.seed + i) for i, k in enumerate(("a", "b"))}
    return state


def describe_checkpoint(path) -> dict:
    ckpt = _read(path)
    return {k: ckpt[k] for k in ("method", "epoch", "step", "best_val_dice", "manifest")}


def load_segmenter(path) -> tuple[nn.Module, dict]:
    ckpt = _read(path)
    if "seg" not in ckpt["nets"]:
        raise ValueError(f"checkpoint {path} holds no segmenter")
    cfg = TrainConfig.from_dict(ckpt["config"])
    seg = UNetSegmenter(SegmenterSpec(cfg.image_size, cfg.seg_filters))
    seg.load_state_dict(ckpt["nets"]["seg"])
    seg.eval()
    return seg, {"method": ckpt["method"], "epoch": ckpt["epoch"], "best_val_dice": ckpt["best_val_dice"]}


def param_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in net.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# loop

def epoch_seed(seed: int, epoch: int) -> int:
    return seed * 100_003 + epoch


def train_loop(cfg: TrainConfig, store_a: DomainStore, store_b: DomainStore, val_a: DomainStore,
               val_b: DomainStore | None = None, resume: bool = True,
               method: str | None = None) -> Path:
    """Run ``cfg.epochs`` epochs; keep the segmenter with the best domain-A validation Dice.

    Domain-B masks, if present, are never used for training or selection;
    with ``val_b`` given, its Dice is only logged.
    """
    ckdir = Path(cfg.checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    best_path, latest_path = ckdir / "best.pt", ckdir / "latest.pt"
    metrics_path = ckdir / "metrics.csv"

    if resume and latest_path.exists():
        state = load_checkpoint(latest_path)
        set_determinism(cfg.seed, cfg.deterministic)
        log.info("resuming from %s at epoch %d", latest_path, state.epoch)
    else:
        for p in (best_path, latest_path, metrics_path):
            p.unlink(missing_ok=True)
        state = TrainState.create(cfg, method=method)

    train_b = store_b.without_masks()
    with MetricsLog(metrics_path) as metrics:
        while state.epoch < cfg.epochs:
            for batch in sample_epoch(store_a, train_b, cfg.batch, epoch_seed(cfg.seed, state.epoch)):
                train_step(state, batch, metrics)
            val = {"dice_a": mean_dice(state.seg, val_a)}
            metrics.write(state.step, state.epoch, "val", val)
            if val_b is not None and val_b.has_masks:
                metrics.write(state.step, state.epoch, "monitor", {"dice_b": mean_dice(state.seg, val_b)})
            metrics.flush()
            log.info("%s epoch %d/%d  val dice A %.4f", state.method, state.epoch + 1, cfg.epochs, val["dice_a"])
            state.epoch += 1
            if val["dice_a"] > state.best_val_dice:
                state.best_val_dice = val["dice_a"]
                save_checkpoint(state, best_path)
            save_checkpoint(state, latest_path)
    if not best_path.exists():
        raise RuntimeError("training finished without producing a checkpoint (zero epochs?)")
    return best_path


def with_weights(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, weights=replace(cfg.weights, **overrides))
