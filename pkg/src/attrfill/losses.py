"""Objective terms for the reconstructor, generator and critic, plus aggregates.

Sign conventions (all three totals are minimized):

    reconstructor: lambda_ae * (mae_contour + lambda_p * mae_patch)
                   - mean(adv_g) - mean(adv_p)            [on the composed output]
                   + lambda_c * bce(logits, c_original)
    generator:     - mean(adv_g) - mean(adv_p)
                   + lambda_c * bce(logits, c_target)
                   + lambda_cycle * mae(input, round-trip output)
    critic:        - (mean real - mean fake)   per branch
                   + lambda_gp * penalty       per branch
                   + lambda_c * bce(real logits, c_original)

The gradient penalty pushes the critic's input-gradient norm toward 1 on
uniform interpolates of real/fake pairs; it is computed independently for the
global branch (full images) and the patch branch (hole crops).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import torch
import torch.nn.functional as F

from .errors import NumericalError
from .masking import MaskSpec, extract_patch


@dataclass(frozen=True)
class LossWeights:
    lambda_ae: float = 10.0
    lambda_cycle: float = 10.0
    lambda_gp: float = 10.0
    lambda_p: float = 5.0
    lambda_c: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")


@dataclass
class LossReport:
    """Per-iteration telemetry. Generator fields hold the most recent G step."""

    iteration: int
    ae_contour: float = 0.0
    ae_patch: float = 0.0
    adv_g: float = 0.0
    adv_p: float = 0.0
    gp_g: float = 0.0
    gp_p: float = 0.0
    class_f: float = 0.0
    class_r: float = 0.0
    cycle: float = 0.0
    total_rec: float = 0.0
    total_gen: float = 0.0
    total_disc: float = 0.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def is_finite(self) -> bool:
        import math
        return all(math.isfinite(v) for k, v in self.to_dict().items() if k != "iteration")

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(LossReport))

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, f.name)) for f in fields(self))


def ae_terms(masked: torch.Tensor, restored: torch.Tensor, original: torch.Tensor,
             m: MaskSpec) -> tuple[torch.Tensor, torch.Tensor]:
    """(contour term, patch term), each a mean over its own region's elements.

    The contour term compares the restored image against the masked input
    outside the hole; the patch term compares the restored hole content
    against the original. Hole pixels where both sides hold the fill value
    are excluded from the contour mean entirely.
    """
    region = m.region_map().to(masked.device)
    contour = ~region
    if contour.any():
        diff_ct = (masked - restored).abs()[:, :, contour].mean()
    else:
        diff_ct = masked.new_zeros(())
    if m.patch_size > 0:
        diff_p = (extract_patch(original, m) - extract_patch(restored, m)).abs().mean()
    else:
        diff_p = masked.new_zeros(())
    return diff_ct, diff_p


def loss_ae(masked: torch.Tensor, restored: torch.Tensor, original: torch.Tensor,
            m: MaskSpec, patch_weight: float = 5.0) -> torch.Tensor:
    ct, p = ae_terms(masked, restored, original, m)
    return ct + patch_weight * p


def critic_term(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(real) - mean(fake); the quantity the critic maximizes per branch."""
    if real_scores.shape[0] != fake_scores.shape[0]:
        raise ValueError("real and fake batches must match in size")
    return real_scores.mean() - fake_scores.mean()


def gradient_penalty(branch: Callable[[torch.Tensor], torch.Tensor],
                     real: torch.Tensor, fake: torch.Tensor,
                     rng: torch.Generator) -> torch.Tensor:
    """mean((||grad branch(x~)||_2 - 1)^2) on per-sample uniform interpolates."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    eps_shape = (real.shape[0],) + (1,) * (real.dim() - 1)
    eps = torch.rand(eps_shape, generator=rng, dtype=real.dtype, device=real.device)
    interp = (eps * real + (1.0 - eps) * fake.detach()).requires_grad_(True)
    scores = branch(interp)
    grads, = torch.autograd.grad(outputs=scores.sum(), inputs=interp, create_graph=True)
    if not torch.isfinite(grads).all():
        raise NumericalError("non-finite gradient inside gradient penalty")
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def adversarial_loss(adv_g: torch.Tensor, adv_p: torch.Tensor) -> torch.Tensor:
    """Generator-side adversarial term: the negated sum of mean critic scores."""
    return -adv_g.mean() - adv_p.mean()


def loss_adv_generatorside(disc, fakes: torch.Tensor, m: MaskSpec) -> torch.Tensor:
    adv_g, adv_p, _ = disc(fakes, m)
    return adversarial_loss(adv_g, adv_p)


def classification_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean multi-label binary cross-entropy; numerically stable for any logit."""
    if logits.shape != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    if logits.numel() == 0:
        return logits.new_zeros(())
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


loss_class_fake = classification_loss
loss_class_real = classification_loss


def loss_cycle(x_in: torch.Tensor, x_roundtrip: torch.Tensor) -> torch.Tensor:
    if x_in.shape != x_roundtrip.shape:
        raise ValueError("cycle inputs must share a shape")
    return (x_in - x_roundtrip).abs().mean()


def total_rec(ae: torch.Tensor, adv: torch.Tensor, class_f: torch.Tensor,
              w: LossWeights) -> torch.Tensor:
    return w.lambda_ae * ae + adv + w.lambda_c * class_f


def total_gen(adv: torch.Tensor, class_f: torch.Tensor, cycle: torch.Tensor,
              w: LossWeights) -> torch.Tensor:
    return adv + w.lambda_c * class_f + w.lambda_cycle * cycle


def total_disc(critic_g: torch.Tensor, critic_p: torch.Tensor,
               gp_g: torch.Tensor, gp_p: torch.Tensor,
               class_r: torch.Tensor, w: LossWeights) -> torch.Tensor:
    return -(critic_g + critic_p) + w.lambda_gp * (gp_g + gp_p) + w.lambda_c * class_r
