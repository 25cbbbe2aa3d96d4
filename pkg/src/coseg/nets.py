"""Translator generators, patch discriminators and the segmentation U-Net.

All networks take NCHW float tensors with image values in [-1, 1].
Convolutions use TensorFlow-style "same" padding so that a stride-2 4x4
conv halves the resolution exactly and a stride-1 4x4 conv preserves it
(padding 1 before, 2 after).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.2
INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorSpec:
    input_size: int = 256
    base_channels: int = 64
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if self.input_size <= 0 or self.input_size % 16:
            raise ValueError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if self.base_channels <= 0:
            raise ValueError("base_channels must be > 0")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        s = self.input_size // 16
        return (self.base_channels * 8, s, s)


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_size: int = 256
    base_channels: int = 64
    n_layers: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.n_layers < 1 or self.input_size % (2 ** self.n_layers):
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2**n_layers ({2 ** self.n_layers})")

    @property
    def patch_size(self) -> int:
        return self.input_size // 2 ** self.n_layers


@dataclass(frozen=True)
class SegmenterSpec:
    input_size: int = 256
    base_filters: int = 16
    in_channels: int = 3
    out_channels: int = 1
    depth: int = 4

    def __post_init__(self):
        if self.input_size % (2 ** self.depth):
            raise ValueError(f"input_size must be divisible by {2 ** self.depth}")
        if self.base_filters <= 0:
            raise ValueError("base_filters must be > 0")


def _same_pad_s1(x: torch.Tensor) -> torch.Tensor:
    # 4x4 stride-1 "same": total padding 3, split 1 before / 2 after
    return F.pad(x, (1, 2, 1, 2))


def _instance_norm(x: torch.Tensor) -> torch.Tensor:
    return F.instance_norm(x, eps=1e-5)


def _check_input(x: torch.Tensor, size: int, channels: int, who: str):
    if x.dim() != 4:
        raise ValueError(f"{who}: expected NCHW batch, got shape {tuple(x.shape)}")
    _, c, h, w = x.shape
    if h != w:
        raise ValueError(f"{who}: input must be square, got {h}x{w}")
    if h % 16:
        raise ValueError(f"{who}: spatial size {h} not divisible by 16")
    if h != size or c != channels:
        raise ValueError(f"{who}: expected ({channels}, {size}, {size}), got {tuple(x.shape[1:])}")


def init_weights(module: nn.Module, std: float = INIT_STD) -> None:
    """Gaussian(0, std) conv kernels, zero biases."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def init_he(module: nn.Module) -> None:
    """He-normal conv kernels, zero biases.

    The un-normalized segmenter needs fan-in scaling: with std 0.02 its
    activations vanish across the ~20 conv layers and it never leaves the
    all-background solution.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class Generator(nn.Module):
    """U-Net-like translator with an exposed contracting-path encoder.

    Contracting path: four (4x4 conv stride 2, LeakyReLU, InstanceNorm)
    blocks, channels c, 2c, 4c, 8c. Expanding path: three (2x nearest
    upsample, 4x4 conv stride 1, ReLU, InstanceNorm) blocks, each
    concatenated with the matching skip, then a final 2x upsample and a
    4x4 output conv with tanh.
    """

    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        widths = [spec.in_channels, c, 2 * c, 4 * c, 8 * c]
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1) for i in range(4))
        # up block k consumes the previous (concatenated) activation
        self.up = nn.ModuleList([
            nn.Conv2d(8 * c, 4 * c, 4),
            nn.Conv2d(8 * c, 2 * c, 4),
            nn.Conv2d(4 * c, c, 4),
        ])
        self.out = nn.Conv2d(2 * c, spec.out_channels, 4)
        # instrumentation hook: called with the bottleneck tensor inside forward
        self.bottleneck_hook: Callable[[torch.Tensor], None] | None = None
        init_weights(self)

    def _contract(self, x: torch.Tensor) -> list[torch.Tensor]:
        skips = []
        for conv in self.down:
            x = _instance_norm(F.leaky_relu(conv(x), LEAKY_SLOPE))
            skips.append(x)
        return skips

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.spec.input_size, self.spec.in_channels, "generator")
        return self._contract(x)[-1]

    def forward(self, x: torch.Tensor, return_latent: bool = False):
        _check_input(x, self.spec.input_size, self.spec.in_channels, "generator")
        skips = self._contract(x)
        latent = skips[-1]
        if self.bottleneck_hook is not None:
            self.bottleneck_hook(latent)
        h = latent
        for k, conv in enumerate(self.up):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = _instance_norm(F.relu(conv(_same_pad_s1(h))))
            h = torch.cat([h, skips[2 - k]], dim=1)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        y = torch.tanh(self.out(_same_pad_s1(h)))
        if return_latent:
            return y, latent
        return y


class PatchDiscriminator(nn.Module):
    """Patch discriminator emitting raw (un-squashed) per-patch scores.

    ``n_layers`` stride-2 4x4 convs (c, 2c, 4c, 8c, ... capped at 8c) with
    LeakyReLU 0.2 and instance norm on all but the first, followed by a
    1-channel stride-1 4x4 conv. Output grid is input_size / 2**n_layers.
    """

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        layers = []
        prev = spec.in_channels
        for i in range(spec.n_layers):
            width = c * min(2 ** i, 8)
            layers.append(nn.Conv2d(prev, width, 4, stride=2, padding=1))
            prev = width
        self.convs = nn.ModuleList(layers)
        self.head = nn.Conv2d(prev, 1, 4)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1:] != (self.spec.in_channels, self.spec.input_size, self.spec.input_size):
            raise ValueError(f"discriminator: unexpected input shape {tuple(x.shape)}")
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i > 0:
                x = _instance_norm(x)
            x = F.leaky_relu(x, LEAKY_SLOPE)
        return self.head(_same_pad_s1(x))


class _DoubleConv(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
        )


class UNetSegmenter(nn.Module):
    """Plain U-Net (no normalization) with sigmoid output.

    ``depth`` max-pool steps; filters f, 2f, ..., f * 2**depth at the
    bottleneck. Decoder uses 2x nearest upsampling + 3x3 conv, then
    concatenation with the encoder skip and a double conv.
    """

    def __init__(self, spec: SegmenterSpec = SegmenterSpec()):
        super().__init__()
        self.spec = spec
        f = spec.base_filters
        widths = [f * 2 ** i for i in range(spec.depth + 1)]
        self.enc = nn.ModuleList()
        prev = spec.in_channels
        for w in widths:
            self.enc.append(_DoubleConv(prev, w))
            prev = w
        self.up_convs = nn.ModuleList()
        self.dec = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.up_convs.append(nn.Conv2d(2 * w, w, 3, padding=1))
            self.dec.append(_DoubleConv(2 * w, w))
        self.head = nn.Conv2d(f, spec.out_channels, 1)
        init_he(self)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1:] != (self.spec.in_channels, self.spec.input_size, self.spec.input_size):
            raise ValueError(f"segmenter: unexpected input shape {tuple(x.shape)}")
        skips = []
        for i, block in enumerate(self.enc):
            if i > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            skips.append(x)
        for up, block, skip in zip(self.up_convs, self.dec, reversed(skips[:-1])):
            x = F.relu(up(F.interpolate(x, scale_factor=2, mode="nearest")))
            x = block(torch.cat([x, skip], dim=1))
        return self.head(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
