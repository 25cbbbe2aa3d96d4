"""Glue between an ExperimentConfig and the data / train / eval modules."""
from __future__ import annotations

import logging
from pathlib import Path

from .baseline import run_baseline_decoupled
from .config import METHOD_TAGS, ConfigError, ExperimentConfig
from .data import DomainStore, load_domain, make_synthetic, split_store
from .evaluation import EvalReport, emit_report, evaluate_case
from .train import train_loop

log = logging.getLogger(__name__)


def run_synth(exp: ExperimentConfig, seed: int | None = None) -> tuple[DomainStore, DomainStore]:
    if exp.synthetic is None:
        raise ConfigError("config has no [synthetic] section")
    seed = exp.train.seed if seed is None else seed
    return make_synthetic(exp.synthetic, exp.resolved_data_root, seed)


def load_splits(exp: ExperimentConfig) -> dict[str, DomainStore]:
    """Keys a_train, a_val, a_test, b_train, b_val, b_test."""
    size = exp.image_size
    if exp.paths:
        out = {}
        for key, path in exp.paths.items():
            labelled = key.startswith("a_") or (path / "masks").is_dir()
            name = exp.domain_a_name if key.startswith("a_") else exp.domain_b_name
            out[key] = load_domain(path, size, with_masks=labelled, name=name)
        return out
    root = exp.resolved_data_root
    a = load_domain(root / "A", size, True, name=exp.domain_a_name)
    b = load_domain(root / "B", size, (root / "B" / "masks").is_dir(), name=exp.domain_b_name)
    out = {}
    for tag, store in (("a", a), ("b", b)):
        for part, sub in zip(("train", "val", "test"), split_store(store, exp.split)):
            sub.name = store.name
            out[f"{tag}_{part}"] = sub
    return out


def run_train(exp: ExperimentConfig, method: str | None = None,
              splits: dict[str, DomainStore] | None = None) -> Path:
    method = method or exp.method
    splits = splits or load_splits(exp)
    cfg = exp.train_config(method)
    if method == "baseline":
        return run_baseline_decoupled(cfg, splits["a_train"], splits["b_train"], splits["a_val"],
                                      translation_epochs=exp.baseline_translation_epochs)
    val_b = splits.get("b_val")
    return train_loop(cfg, splits["a_train"], splits["b_train"], splits["a_val"],
                      val_b=val_b if val_b is not None and val_b.has_masks else None,
                      method=METHOD_TAGS[method])


def run_eval(exp: ExperimentConfig, checkpoints: list[Path],
             splits: dict[str, DomainStore] | None = None, out: Path | None = None,
             n_samples: int = 4) -> tuple[list[EvalReport], dict[str, Path]]:
    for ck in checkpoints:
        if not Path(ck).exists():
            raise FileNotFoundError(f"checkpoint not found: {ck}")
    splits = splits or load_splits(exp)
    reports = [evaluate_case(ck, splits["a_test"], splits["b_test"], case=exp.case, n_samples=n_samples)
               for ck in checkpoints]
    logs = {r.method: Path(ck).parent / "metrics.csv" for r, ck in zip(reports, checkpoints)}
    paths = emit_report(reports, out or exp.output_dir / "report", metrics_logs=logs)
    return reports, paths
