"""Stub networks and micro-configurations shared by the tests."""
import torch
import torch.nn as nn

from coseg.train import TrainConfig


class IdentityGen(nn.Module):
    """Generator stand-in: forward is the identity, encode adds ``offset``."""

    def __init__(self, offset: float = 0.0):
        super().__init__()
        self.offset = offset
        self.dummy = nn.Parameter(torch.zeros(()))

    def encode(self, x):
        return x + self.offset

    def forward(self, x, return_latent=False):
        y = x + 0.0 * self.dummy
        return (y, self.encode(x)) if return_latent else y


class ConstDisc(nn.Module):
    def __init__(self, value: float, grid: int = 4):
        super().__init__()
        self.value = value
        self.grid = grid
        self.dummy = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        return torch.full((x.shape[0], 1, self.grid, self.grid), self.value) + 0.0 * self.dummy


class FixedSeg(nn.Module):
    """Segmenter stand-in returning a fixed probability map."""

    def __init__(self, probs: torch.Tensor):
        super().__init__()
        self.probs = probs
        self.dummy = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        return self.probs + 0.0 * self.dummy


def micro_config(**kw) -> TrainConfig:
    base = dict(image_size=32, gen_channels=4, disc_channels=4, disc_layers=4, seg_filters=4,
                epochs=2, batch=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)
