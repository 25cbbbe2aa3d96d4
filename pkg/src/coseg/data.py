"""Domain stores, unpaired batch sampling and the synthetic two-domain set.

On-disk layout: ``<root>/<domain>/images/*.png`` (RGB, 8-bit) and
``<root>/<domain>/masks/*.png`` (single channel, 0/255), masks optional.
In memory images are float32 NCHW in [-1, 1], masks float32 N1HW in {0, 1}.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import torch
from PIL import Image

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class DomainStore:
    name: str
    image_dir: Path
    mask_dir: Path | None
    images: torch.Tensor
    masks: torch.Tensor | None
    stems: list[str]

    @property
    def frame_count(self) -> int:
        return self.images.shape[0]

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    @property
    def has_masks(self) -> bool:
        return self.masks is not None

    def subset(self, indices, name: str | None = None) -> "DomainStore":
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        return DomainStore(
            name=name or self.name,
            image_dir=self.image_dir,
            mask_dir=self.mask_dir,
            images=self.images[idx],
            masks=None if self.masks is None else self.masks[idx],
            stems=[self.stems[i] for i in idx.tolist()],
        )

    def without_masks(self) -> "DomainStore":
        return DomainStore(self.name, self.image_dir, None, self.images, None, list(self.stems))


class UnpairedBatch(NamedTuple):
    """One training batch. Domain B is unlabelled by construction."""
    x_a: torch.Tensor
    y_a: torch.Tensor
    x_b: torch.Tensor


def normalize_image(arr: np.ndarray) -> np.ndarray:
    """uint8 HWC -> float32 CHW in [-1, 1]."""
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def load_domain(path, size: int, with_masks: bool = True, name: str | None = None) -> DomainStore:
    """Load ``<path>/images`` (and ``<path>/masks``) resized to size x size.

    Images are resized bilinearly and mapped to [-1, 1]; masks are resized
    nearest-neighbour and binarized at half intensity.
    """
    root = Path(path)
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise FileNotFoundError(f"no images directory at {image_dir}")
    files = _list_images(image_dir)
    if not files:
        raise ValueError(f"empty image directory {image_dir}")
    mask_dir = root / "masks" if with_masks else None
    if with_masks and not mask_dir.is_dir():
        raise FileNotFoundError(f"no masks directory at {mask_dir}")
    mask_index = {p.stem: p for p in _list_images(mask_dir)} if with_masks else {}

    images, masks, stems = [], [], []
    for f in files:
        try:
            with Image.open(f) as im:
                im = im.convert("RGB")
                native = im.size
                if im.size != (size, size):
                    im = im.resize((size, size), Image.BILINEAR)
                images.append(normalize_image(np.asarray(im)))
        except OSError as exc:
            raise ValueError(f"cannot decode image {f}: {exc}") from exc
        if with_masks:
            mp = mask_index.get(f.stem)
            if mp is None:
                raise FileNotFoundError(f"missing mask for image {f.name} in {mask_dir}")
            with Image.open(mp) as m:
                m = m.convert("L")
                if m.size != native:
                    raise ValueError(f"mask {mp.name} size {m.size} differs from image size {native}")
                if m.size != (size, size):
                    m = m.resize((size, size), Image.NEAREST)
                masks.append((np.asarray(m, dtype=np.float32) / 255.0 >= 0.5).astype(np.float32)[None])
        stems.append(f.stem)

    return DomainStore(
        name=name or root.name,
        image_dir=image_dir,
        mask_dir=mask_dir,
        images=torch.from_numpy(np.stack(images)),
        masks=torch.from_numpy(np.stack(masks)) if with_masks else None,
        stems=stems,
    )


def split_indices(n: int, fractions=(0.8, 0.1, 0.1)) -> tuple[range, range, range]:
    """Contiguous train/val/test split by frame index."""
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, n)


def split_store(store: DomainStore, fractions=(0.8, 0.1, 0.1)) -> tuple[DomainStore, DomainStore, DomainStore]:
    parts = split_indices(store.frame_count, fractions)
    return tuple(store.subset(r, name=f"{store.name}_{tag}")
                 for r, tag in zip(parts, ("train", "val", "test")))


def _index_stream(n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    out = []
    total = 0
    while total < length:
        perm = rng.permutation(n)
        out.append(perm)
        total += n
    return np.concatenate(out)[:length]


def epoch_length(n_a: int, n_b: int, batch: int) -> int:
    return math.ceil(max(n_a, n_b) / batch)


def sample_epoch(store_a: DomainStore, store_b: DomainStore, batch: int, seed: int) -> Iterator[UnpairedBatch]:
    """Independently shuffled unpaired batches covering the larger domain once.

    The smaller domain is cycled, reshuffling on every pass. Every batch is
    full. Deterministic for a given seed.
    """
    if store_a.frame_count == 0 or store_b.frame_count == 0:
        raise ValueError("both domains must be non-empty")
    if not store_a.has_masks:
        raise ValueError(f"domain {store_a.name} has no masks; the labelled domain needs them")
    if batch < 1 or batch > max(store_a.frame_count, store_b.frame_count):
        raise ValueError(f"batch size {batch} exceeds the larger domain "
                         f"({max(store_a.frame_count, store_b.frame_count)} frames)")
    n_batches = epoch_length(store_a.frame_count, store_b.frame_count, batch)
    rng_a = np.random.default_rng([seed, 0])
    rng_b = np.random.default_rng([seed, 1])
    idx_a = torch.from_numpy(_index_stream(store_a.frame_count, n_batches * batch, rng_a))
    idx_b = torch.from_numpy(_index_stream(store_b.frame_count, n_batches * batch, rng_b))
    for k in range(n_batches):
        sl = slice(k * batch, (k + 1) * batch)
        ia, ib = idx_a[sl], idx_b[sl]
        yield UnpairedBatch(store_a.images[ia], store_a.masks[ia], store_b.images[ib])


# --------------------------------------------------------------------------
# synthetic two-domain data

SHAPES = ("capsule", "bar", "lshape")


@dataclass
class Appearance:
    """Per-domain rendering style. Scene geometry never depends on it."""
    texture_seed: int = 0
    hue_shift: float = 0.0      # degrees, applied to the whole frame
    brightness: float = 1.0     # multiplicative gain on the rendered frame
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)  # per-channel gain
    noise_sigma: float = 0.0    # additive Gaussian noise, intensity units in [0, 1]


@dataclass
class SyntheticSpec:
    n_frames: int = 200
    image_size: int = 64
    shapes: tuple[str, ...] = SHAPES
    min_tools: int = 1
    max_tools: int = 3
    fg_range: tuple[float, float] = (0.02, 0.5)
    domain_a: Appearance = field(default_factory=Appearance)
    domain_b: Appearance = field(default_factory=lambda: Appearance(
        texture_seed=1, hue_shift=150.0, brightness=0.7, tint=(0.8, 1.0, 1.25), noise_sigma=0.04))

    def __post_init__(self):
        bad = set(self.shapes) - set(SHAPES)
        if bad:
            raise ValueError(f"unknown shape families {sorted(bad)}")
        if self.image_size % 16:
            raise ValueError("image_size must be divisible by 16")


def _capsule_mask(xx, yy, p0, p1, radius):
    d = p1 - p0
    t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / max(d @ d, 1e-9), 0.0, 1.0)
    dx = xx - (p0[0] + t * d[0])
    dy = yy - (p0[1] + t * d[1])
    return dx * dx + dy * dy <= radius * radius


def _bar_mask(xx, yy, p0, p1, half_width):
    d = p1 - p0
    length = max(math.hypot(*d), 1e-9)
    u = d / length
    along = (xx - p0[0]) * u[0] + (yy - p0[1]) * u[1]
    perp = -(xx - p0[0]) * u[1] + (yy - p0[1]) * u[0]
    return (along >= 0) & (along <= length) & (np.abs(perp) <= half_width)


def _tool_mask(kind: str, xx, yy, size: int, rng: np.random.Generator):
    """One instrument proxy entering from the border, with a round wrist at its tip."""
    side = rng.integers(4)
    edge = rng.uniform(0.1, 0.9) * size
    start = {0: (edge, -2.0), 1: (size + 1.0, edge), 2: (edge, size + 1.0), 3: (-2.0, edge)}[side]
    start = np.array(start)
    target = rng.uniform(0.25, 0.75, size=2) * size
    direction = target - start
    direction /= np.linalg.norm(direction)
    length = rng.uniform(0.45, 0.85) * size
    tip = start + direction * length
    width = rng.uniform(0.035, 0.07) * size
    if kind == "capsule":
        mask = _capsule_mask(xx, yy, start, tip, width)
    elif kind == "bar":
        mask = _bar_mask(xx, yy, start, tip, width)
    else:
        # shaft plus a bent jaw segment
        angle = rng.choice([-1.0, 1.0]) * rng.uniform(math.pi / 3, math.pi / 2)
        c, s = math.cos(angle), math.sin(angle)
        jaw_dir = np.array([c * direction[0] - s * direction[1], s * direction[0] + c * direction[1]])
        jaw_end = tip + jaw_dir * rng.uniform(0.12, 0.22) * size
        mask = _bar_mask(xx, yy, start, tip, width) | _bar_mask(xx, yy, tip, jaw_end, width * 0.8)
    mask |= _capsule_mask(xx, yy, tip, tip, width * rng.uniform(1.3, 1.7))
    return mask, start, direction


def _texture(size: int, texture_rng: np.random.Generator, frame_rng: np.random.Generator, n_waves: int = 6):
    """Smooth zero-mean tissue-like field in roughly [-1, 1].

    The domain's texture seed fixes the spatial frequencies; each frame
    draws its own phases.
    """
    freqs = texture_rng.uniform(1.0, 6.0, size=n_waves)
    angles = texture_rng.uniform(0, 2 * math.pi, size=n_waves)
    amps = texture_rng.uniform(0.5, 1.0, size=n_waves)
    phases = frame_rng.uniform(0, 2 * math.pi, size=n_waves)
    yy, xx = np.mgrid[0:size, 0:size] / size
    field_ = np.zeros((size, size))
    for f, a, amp, ph in zip(freqs, angles, amps, phases):
        field_ += amp * np.sin(2 * math.pi * f * (xx * math.cos(a) + yy * math.sin(a)) + ph)
    return field_ / amps.sum() * 2.0


def _hue_rotate(rgb: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate hue about the grey axis (keeps luminance roughly fixed)."""
    if degrees == 0:
        return rgb
    # Rodrigues rotation around (1,1,1)/sqrt(3)
    th = math.radians(degrees)
    c, s = math.cos(th), math.sin(th)
    k = 1.0 / 3.0
    sq = math.sqrt(k)
    m = np.array([
        [c + (1 - c) * k, k * (1 - c) - sq * s, k * (1 - c) + sq * s],
        [k * (1 - c) + sq * s, c + (1 - c) * k, k * (1 - c) - sq * s],
        [k * (1 - c) - sq * s, k * (1 - c) + sq * s, c + (1 - c) * k],
    ])
    return rgb @ m.T


def sample_scene(spec: SyntheticSpec, rng: np.random.Generator, max_tries: int = 200) -> list:
    """Rejection-sample tool layouts until the foreground fraction is in range."""
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    lo, hi = spec.fg_range
    for _ in range(max_tries):
        n_tools = int(rng.integers(spec.min_tools, spec.max_tools + 1))
        tools = []
        union = np.zeros((size, size), dtype=bool)
        for _ in range(n_tools):
            kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
            m, start, direction = _tool_mask(kind, xx, yy, size, rng)
            grey = rng.uniform(0.55, 0.85)
            tools.append((m, start, direction, grey))
            union |= m
        frac = union.mean()
        if lo <= frac <= hi:
            return tools
    raise RuntimeError("could not sample a scene within the foreground range")


def render_frame(spec: SyntheticSpec, appearance: Appearance, frame_rng: np.random.Generator,
                 texture_rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Render one frame. Returns (float RGB HxWx3 in [0,1], bool mask HxW)."""
    size = spec.image_size
    tools = sample_scene(spec, frame_rng)
    tex = _texture(size, np.random.default_rng(texture_rng_seed), frame_rng)
    base = np.array([0.78, 0.36, 0.34])
    rgb = base[None, None, :] * (1.0 + 0.25 * tex[..., None])
    # darker vignette, as under an endoscope light
    yy, xx = (np.mgrid[0:size, 0:size] + 0.5) / size - 0.5
    rgb *= (1.0 - 0.6 * (xx ** 2 + yy ** 2))[..., None]

    gy, gx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    union = np.zeros((size, size), dtype=bool)
    for m, start, direction, grey in tools:
        # cylindrical shading across the shaft
        perp = np.abs(-(gx - start[0]) * direction[1] + (gy - start[1]) * direction[0])
        shade = grey * (1.0 + 0.25 * np.cos(np.clip(perp / (0.08 * size), 0, math.pi)))
        metal = np.stack([shade * 0.97, shade, shade * 1.02], axis=-1)
        rgb[m] = metal[m]
        union |= m

    rgb = _hue_rotate(rgb, appearance.hue_shift)
    rgb = rgb * appearance.brightness * np.asarray(appearance.tint)[None, None, :]
    if appearance.noise_sigma > 0:
        rgb = rgb + frame_rng.normal(0.0, appearance.noise_sigma, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0), union


def _write_png(path: Path, arr: np.ndarray):
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def make_synthetic(spec: SyntheticSpec, out_dir, seed: int = 0) -> tuple[DomainStore, DomainStore]:
    """Render both domains to ``out_dir/A`` and ``out_dir/B`` and load them back.

    Scenes in A and B are drawn from the same layout distribution but from
    independent random streams, so the two sets are unpaired. Masks are
    written for both domains; B's are meant for evaluation only.
    """
    out = Path(out_dir)
    for d_idx, (name, look) in enumerate((("A", spec.domain_a), ("B", spec.domain_b))):
        img_dir = out / name / "images"
        mask_dir = out / name / "masks"
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i in range(spec.n_frames):
            rng = np.random.default_rng([seed, d_idx, i])
            rgb, mask = render_frame(spec, look, rng, look.texture_seed)
            _write_png(img_dir / f"{i:05d}.png", np.round(rgb * 255).astype(np.uint8))
            _write_png(mask_dir / f"{i:05d}.png", (mask * 255).astype(np.uint8))
    manifest = {"seed": seed, "spec": asdict(spec),
                "domains": {"A": {"frames": spec.n_frames}, "B": {"frames": spec.n_frames}}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return (load_domain(out / "A", spec.image_size, True, name="A"),
            load_domain(out / "B", spec.image_size, True, name="B"))
