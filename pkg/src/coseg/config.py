"""Experiment configuration read from an INI-style ``.cfg`` file.

Sections and keys (all optional unless noted)::

    [experiment]  method = coseg | coseg_no_structure | baseline
                  output_dir, case
    [data]        image_size, root, split = 0.8, 0.1, 0.1,
                  a_train, a_val, a_test, b_train, b_val, b_test,
                  domain_a_name, domain_b_name
    [train]       epochs, batch, lr, adam_beta1, adam_beta2, seed,
                  gen_channels, disc_channels, disc_layers, seg_filters,
                  image_pool, grad_clip, deterministic,
                  baseline_translation_epochs
    [weights]     lambda1 .. lambda5, gamma, alpha
    [synthetic]   n_frames, shapes, min_tools, max_tools, fg_min, fg_max
    [synthetic.A], [synthetic.B]
                  texture_seed, hue_shift, brightness, tint = r, g, b, noise_sigma

When no explicit split directories are given, domains are read from
``<root>/A`` and ``<root>/B`` (default root: ``<output_dir>/data``) and
split by frame index.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import Appearance, SyntheticSpec
from .losses import LossWeights
from .train import TrainConfig

METHOD_TAGS = {"coseg": "coSegGAN", "coseg_no_structure": "coSegGAN--", "baseline": "baseline_decoupled"}
SPLIT_KEYS = ("a_train", "a_val", "a_test", "b_train", "b_val", "b_test")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str = "coseg"
    output_dir: Path = Path("runs/experiment")
    case: str = "1"
    image_size: int = 64
    data_root: Path | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    paths: dict[str, Path] = field(default_factory=dict)
    domain_a_name: str = "A"
    domain_b_name: str = "B"
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline_translation_epochs: int = 50
    synthetic: SyntheticSpec | None = None

    @property
    def method_tag(self) -> str:
        return METHOD_TAGS[self.method]

    @property
    def resolved_data_root(self) -> Path:
        return self.data_root if self.data_root is not None else self.output_dir / "data"

    def method_dir(self, method: str | None = None) -> Path:
        return self.output_dir / (method or self.method)

    def train_config(self, method: str | None = None) -> TrainConfig:
        """TrainConfig for one method; the no-structure variant forces lambda4 = 0."""
        method = method or self.method
        cfg = TrainConfig.from_dict({**self.train.to_dict(),
                                     "checkpoint_dir": str(self.method_dir(method)),
                                     "ablation_no_structure": method == "coseg_no_structure"})
        return cfg

    def validate(self, need_data: bool = True) -> list[str]:
        """Every problem found, not just the first."""
        errors = []
        if self.method not in METHOD_TAGS:
            errors.append(f"experiment.method must be one of {sorted(METHOD_TAGS)}, got {self.method!r}")
        if self.image_size <= 0 or self.image_size % 16:
            errors.append(f"data.image_size must be a positive multiple of 16, got {self.image_size}")
        if self.image_size != self.train.image_size:
            errors.append("data.image_size and the training image size disagree")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(s < 0 for s in self.split):
            errors.append(f"data.split must be non-negative and sum to 1, got {self.split}")
        if self.baseline_translation_epochs < 0:
            errors.append("train.baseline_translation_epochs must be >= 0")
        if self.synthetic is not None and self.synthetic.image_size != self.image_size:
            errors.append("synthetic image size must equal data.image_size")
        if need_data:
            if self.paths:
                missing = [k for k in SPLIT_KEYS if k not in self.paths]
                if missing:
                    errors.append(f"data: explicit split paths incomplete, missing {missing}")
                for k, p in self.paths.items():
                    if not (p / "images").is_dir():
                        errors.append(f"data.{k}: no images directory under {p}")
                for k in ("a_train", "a_val", "a_test", "b_test"):
                    if k in self.paths and not (self.paths[k] / "masks").is_dir():
                        errors.append(f"data.{k}: masks required under {self.paths[k]}")
            else:
                root = self.resolved_data_root
                for d in ("A", "B"):
                    if not (root / d / "images").is_dir():
                        errors.append(f"data: no images directory at {root / d / 'images'}")
                if not (root / "A" / "masks").is_dir():
                    errors.append(f"data: domain A must carry masks ({root / 'A' / 'masks'} missing)")
        return errors


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _coerce(cls, section: configparser.SectionProxy, skip=()) -> dict:
    out = {}
    types = {f.name: f.type for f in fields(cls)}
    for key, raw in section.items():
        if key in skip or key not in types:
            continue
        t = str(types[key])
        if raw.strip() == "":
            out[key] = None
        elif "bool" in t:
            out[key] = section.getboolean(key)
        elif "int" in t and "float" not in t:
            out[key] = int(raw)
        elif "float" in t:
            out[key] = float(raw)
        else:
            out[key] = raw
    return out


def _unknown(section: configparser.SectionProxy, allowed) -> list[str]:
    return [f"[{section.name}] unknown key {k!r}" for k in section if k not in allowed]


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_parser(cp, overrides)


def from_parser(cp: configparser.ConfigParser, overrides: dict | None = None) -> ExperimentConfig:
    overrides = overrides or {}
    errors: list[str] = []
    try:
        exp = cp["experiment"] if cp.has_section("experiment") else {}
        data = cp["data"] if cp.has_section("data") else None
        image_size = int(data.get("image_size", 64)) if data is not None else 64

        train_kw = {}
        extra_train = {"baseline_translation_epochs"}
        if cp.has_section("train"):
            sec = cp["train"]
            allowed = {f.name for f in fields(TrainConfig)} | extra_train
            errors += _unknown(sec, allowed - {"weights", "checkpoint_dir", "image_size", "ablation_no_structure"})
            train_kw = _coerce(TrainConfig, sec, skip=("weights", "checkpoint_dir", "image_size"))
        weights_kw = {}
        if cp.has_section("weights"):
            errors += _unknown(cp["weights"], {f.name for f in fields(LossWeights)})
            weights_kw = {k: float(v) for k, v in cp["weights"].items() if k in {f.name for f in fields(LossWeights)}}
        baseline_epochs = cp.getint("train", "baseline_translation_epochs", fallback=50)

        for k in ("seed", "epochs"):
            if overrides.get(k) is not None:
                train_kw[k] = overrides[k]
        train_kw = {k: v for k, v in train_kw.items() if v is not None or k == "grad_clip"}
        train = TrainConfig(image_size=image_size, weights=LossWeights(**weights_kw), **train_kw)

        synthetic = None
        if cp.has_section("synthetic"):
            s = cp["synthetic"]
            looks = {}
            for d in ("A", "B"):
                name = f"synthetic.{d}"
                if cp.has_section(name):
                    sec = cp[name]
                    kw = {"texture_seed": sec.getint("texture_seed", 0),
                          "hue_shift": sec.getfloat("hue_shift", 0.0),
                          "brightness": sec.getfloat("brightness", 1.0),
                          "noise_sigma": sec.getfloat("noise_sigma", 0.0)}
                    if "tint" in sec:
                        kw["tint"] = _floats(sec["tint"])
                    looks[d] = Appearance(**kw)
            spec_kw = dict(n_frames=s.getint("n_frames", 200), image_size=image_size,
                           min_tools=s.getint("min_tools", 1), max_tools=s.getint("max_tools", 3),
                           fg_range=(s.getfloat("fg_min", 0.02), s.getfloat("fg_max", 0.5)))
            if "shapes" in s:
                spec_kw["shapes"] = tuple(x.strip() for x in s["shapes"].split(",") if x.strip())
            if "A" in looks:
                spec_kw["domain_a"] = looks["A"]
            if "B" in looks:
                spec_kw["domain_b"] = looks["B"]
            synthetic = SyntheticSpec(**spec_kw)

        paths = {}
        root = None
        split = (0.8, 0.1, 0.1)
        names = ("A", "B")
        if data is not None:
            paths = {k: Path(data[k]) for k in SPLIT_KEYS if data.get(k)}
            root = Path(data["root"]) if data.get("root") else None
            if data.get("split"):
                split = _floats(data["split"])
            names = (data.get("domain_a_name", "A"), data.get("domain_b_name", "B"))

        cfg = ExperimentConfig(
            method=overrides.get("method") or exp.get("method", "coseg"),
            output_dir=Path(overrides.get("out") or exp.get("output_dir", "runs/experiment")),
            case=str(exp.get("case", "1")),
            image_size=image_size,
            data_root=root,
            split=split,
            paths=paths,
            domain_a_name=names[0],
            domain_b_name=names[1],
            train=train,
            baseline_translation_epochs=baseline_epochs,
            synthetic=synthetic,
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg
