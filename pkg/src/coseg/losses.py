"""Loss terms and the two composite objectives.

Every term is a mean-reduced scalar tensor. Gradient routing is handled
here: the generator objective treats discriminators and segmenter as
constants, the segmentation objective treats the translator as a constant.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import torch
import torch.nn as nn

PROB_EPS = 1e-7

GENERATOR_TERMS = ("gan_total", "cyc_total", "shape", "structure", "identity")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0   # adversarial
    lambda2: float = 10.0  # cycle consistency
    lambda3: float = 1.0   # shape preservation
    lambda4: float = 5.0   # latent structure
    lambda5: float = 1.0   # identity
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def ablated(self) -> "LossWeights":
        """Same weights without the latent structure term."""
        return replace(self, lambda4=0.0)

    def generator_lambdas(self) -> dict[str, float]:
        return dict(zip(GENERATOR_TERMS,
                        (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)))


@contextlib.contextmanager
def frozen(*modules: nn.Module):
    """Temporarily stop gradient accumulation into the given modules."""
    params = [p for m in modules if m is not None for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad_(flag)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def focal_loss(pred: torch.Tensor, target: torch.Tensor,
               gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    """Alpha-balanced binary focal loss on probabilities, mean over pixels.

    ``-alpha_t * (1 - p_t)**gamma * log(p_t)`` with p_t the probability of
    the true class and alpha_t = alpha on positives, 1 - alpha on negatives.
    """
    _check_same_shape(pred, target, "focal_loss")
    if not torch.all((target == 0) | (target == 1)):
        raise ValueError("focal_loss: target values must be 0 or 1")
    p = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pos = target == 1
    p_t = torch.where(pos, p, 1.0 - p)
    alpha_t = torch.where(pos, torch.full_like(p, alpha), torch.full_like(p, 1.0 - alpha))
    return (-alpha_t * (1.0 - p_t) ** gamma * torch.log(p_t)).mean()


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b, "l1")
    return (a - b).abs().mean()


def gan_loss_generator(disc: nn.Module, fake: torch.Tensor) -> torch.Tensor:
    return ((disc(fake) - 1.0) ** 2).mean()


def gan_loss_discriminator(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    fake = fake.detach()
    return 0.5 * ((disc(real) - 1.0) ** 2).mean() + 0.5 * (disc(fake) ** 2).mean()


def cycle_loss(g_a: nn.Module, g_b: nn.Module, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
    return l1(x_a, g_a(g_b(x_a))) + l1(x_b, g_b(g_a(x_b)))


def identity_loss(g_a: nn.Module, g_b: nn.Module, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
    return l1(g_a(x_a), x_a) + l1(g_b(x_b), x_b)


def structure_loss(g_a: nn.Module, g_b: nn.Module, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
    """L1 between encoder codes of an image and of its translation.

    The domain-A encoder lives in g_b (it reads A images), the domain-B
    encoder in g_a.
    """
    enc_a, enc_b = g_b.encode, g_a.encode
    return l1(enc_a(x_a), enc_b(g_b(x_a))) + l1(enc_b(x_b), enc_a(g_a(x_b)))


def segmentation_loss(seg: nn.Module, g_b: nn.Module, x_a: torch.Tensor, y_a: torch.Tensor,
                      w: LossWeights = LossWeights(), fake_b: torch.Tensor | None = None,
                      breakdown: dict | None = None) -> torch.Tensor:
    """Focal loss of the segmenter on real and translated domain-A images.

    The translation is computed without gradient (or passed in as
    ``fake_b``), so only the segmenter receives gradients.
    """
    if fake_b is None:
        with torch.no_grad():
            fake_b = g_b(x_a)
    else:
        fake_b = fake_b.detach()
    foc_real = focal_loss(seg(x_a), y_a, w.gamma, w.alpha)
    foc_translated = focal_loss(seg(fake_b), y_a, w.gamma, w.alpha)
    total = foc_real + foc_translated
    if breakdown is not None:
        breakdown.update(foc_real=foc_real.item(), foc_translated=foc_translated.item(),
                         seg_total=total.item())
    return total


def shape_loss(seg: nn.Module, g_b: nn.Module, x_a: torch.Tensor, y_a: torch.Tensor,
               w: LossWeights = LossWeights()) -> torch.Tensor:
    """Focal loss of a frozen segmenter on G_B(x_a); gradients reach G_B only."""
    with frozen(seg):
        return focal_loss(seg(g_b(x_a)), y_a, w.gamma, w.alpha)


def generator_total_loss(g_a: nn.Module, g_b: nn.Module, d_a: nn.Module, d_b: nn.Module,
                         seg: nn.Module | None, x_a: torch.Tensor, x_b: torch.Tensor, y_a: torch.Tensor,
                         w: LossWeights = LossWeights()) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted translator objective and its unweighted term breakdown.

    Each generator pass is run once and reused: G_B(x_a) also yields the
    domain-A code of x_a, and G_A(G_B(x_a)) yields the domain-B code of the
    translation (symmetrically for x_b).
    """
    with frozen(d_a, d_b, seg):
        fake_b, code_xa = g_b(x_a, return_latent=True)
        rec_a, code_fake_b = g_a(fake_b, return_latent=True)
        fake_a, code_xb = g_a(x_b, return_latent=True)
        rec_b, code_fake_a = g_b(fake_a, return_latent=True)

        terms = {
            "gan_total": gan_loss_generator(d_b, fake_b) + gan_loss_generator(d_a, fake_a),
            "cyc_total": l1(x_a, rec_a) + l1(x_b, rec_b),
            # no segmenter in the loop (decoupled translator training)
            "shape": (focal_loss(seg(fake_b), y_a, w.gamma, w.alpha) if seg is not None
                      else fake_b.new_zeros(())),
            "structure": l1(code_xa, code_fake_b) + l1(code_xb, code_fake_a),
            "identity": l1(g_a(x_a), x_a) + l1(g_b(x_b), x_b),
        }
        lambdas = w.generator_lambdas()
        total = sum(lambdas[k] * terms[k] for k in GENERATOR_TERMS)

    breakdown = {k: v.item() for k, v in terms.items()}
    breakdown["generator_total"] = total.item()
    return total, breakdown
