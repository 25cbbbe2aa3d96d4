"""Joint unpaired image translation and instrument segmentation (coSegGAN)."""
from .losses import LossWeights
from .nets import (DiscriminatorSpec, Generator, GeneratorSpec, PatchDiscriminator,
                   SegmenterSpec, UNetSegmenter)
from .train import TrainConfig

__all__ = ["LossWeights", "Generator", "GeneratorSpec", "PatchDiscriminator", "DiscriminatorSpec",
           "UNetSegmenter", "SegmenterSpec", "TrainConfig"]
__version__ = "0.1.0"
