"""Objective terms for consistency-regularized unpaired translation.

Adversarial terms use least-squares targets (real -> 1, fake -> 0,
generator target -> 1) on patch score maps. Cycle consistency is a
weighted per-element L1 between inputs and their round-trip
reconstructions. The three consistency terms penalize a discriminator for
changing its score map when its input is augmented:

    cr_real: D1 on real x1 and D2 on real x2
    cr_fake: D2 on G1(x1) and D1 on G2(x2)
    cr_rec:  D1 on G2(G1(x1)) and D2 on G1(G2(x2))

Consistency terms regularize the discriminators only; generated inputs are
detached here so no gradient ever reaches a generator through them. All
squared-difference reductions are means over the batch and every score-map
element, keeping magnitudes comparable across image sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import torch

from .augment import TransformDraw, apply
from .errors import NumericError, ShapeError, ValidationError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the regularization and cycle terms.

    ``lambda_cyc_1`` weighs the source-side cycle (reconstruction of x1),
    ``lambda_cyc_2`` the target-side cycle. Defaults follow the digit-task
    protocol: consistency on real samples at 1, fake and reconstructed at
    half of that, cycle weights 10 (source) and 0.1 (target).
    """

    lambda_real: float = 1.0
    lambda_fake: float = 0.5
    lambda_rec: float = 0.5
    lambda_cyc_1: float = 10.0
    lambda_cyc_2: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{f.name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossReport:
    """Scalar values of every objective term at one step."""

    gan_g1: float = 0.0
    gan_g2: float = 0.0
    gan_d1: float = 0.0
    gan_d2: float = 0.0
    cyc: float = 0.0
    cr_real: float = 0.0
    cr_fake: float = 0.0
    cr_rec: float = 0.0
    gp: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def is_finite(self) -> bool:
        return all(math.isfinite(getattr(self, f.name)) for f in fields(self))


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not torch.isfinite(t).all():
        raise NumericError(f"{name} contains non-finite values")


def adv_loss_d(d_scores_real: torch.Tensor, d_scores_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss: mean((real - 1)^2) + mean(fake^2).

    The fake score map must come from detached generator output; no
    gradient flows into a generator through this term.
    """
    _check_finite("real scores", d_scores_real)
    _check_finite("fake scores", d_scores_fake)
    return ((d_scores_real - 1.0) ** 2).mean() + (d_scores_fake**2).mean()


def adv_loss_g(d_scores_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss: mean((fake - 1)^2)."""
    _check_finite("fake scores", d_scores_fake)
    return ((d_scores_fake - 1.0) ** 2).mean()


def cycle_loss(
    x1: torch.Tensor,
    rec1: torch.Tensor,
    x2: torch.Tensor,
    rec2: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    """Weighted per-element L1 between inputs and their reconstructions."""
    if x1.shape != rec1.shape or x2.shape != rec2.shape:
        raise ShapeError("reconstruction shape must match its input")
    return w.lambda_cyc_1 * (rec1 - x1).abs().mean() + w.lambda_cyc_2 * (rec2 - x2).abs().mean()


def consistency_gap(scores_clean: torch.Tensor, scores_aug: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between two score maps of equal shape."""
    if scores_clean.shape != scores_aug.shape:
        raise ShapeError("transform must preserve the score-map shape")
    return ((scores_clean - scores_aug) ** 2).mean()


def _cr_pair(d, x: torch.Tensor, t: TransformDraw, scores: torch.Tensor | None = None) -> torch.Tensor:
    s = d(x) if scores is None else scores
    st = d(apply(t, x))
    return consistency_gap(s, st)


def cr_real(
    d1,
    d2,
    x1: torch.Tensor,
    x2: torch.Tensor,
    t: TransformDraw,
    scores1: torch.Tensor | None = None,
    scores2: torch.Tensor | None = None,
) -> torch.Tensor:
    """Consistency penalty of both discriminators on real samples.

    ``scores1``/``scores2`` optionally pass the already-computed clean score
    maps d1(x1)/d2(x2) to skip recomputing those forwards; values are
    identical either way.
    """
    return _cr_pair(d1, x1, t, scores1) + _cr_pair(d2, x2, t, scores2)


def cr_fake(
    d1,
    d2,
    fake2: torch.Tensor,
    fake1: torch.Tensor,
    t: TransformDraw,
    scores2: torch.Tensor | None = None,
    scores1: torch.Tensor | None = None,
) -> torch.Tensor:
    """Consistency penalty on translated samples.

    ``fake2`` lives in the target domain (scored by d2) and ``fake1`` in the
    source domain (scored by d1). Both are detached so gradients reach only
    the discriminators. Precomputed clean score maps may be passed as for
    :func:`cr_real`.
    """
    return _cr_pair(d2, fake2.detach(), t, scores2) + _cr_pair(d1, fake1.detach(), t, scores1)


def cr_rec(d1, d2, rec1: torch.Tensor, rec2: torch.Tensor, t: TransformDraw) -> torch.Tensor:
    """Consistency penalty on cycle-reconstructed samples.

    ``rec1`` is the round trip back into the source domain (scored by d1),
    ``rec2`` the round trip into the target domain (scored by d2). Both are
    detached so gradients reach only the discriminators.
    """
    return _cr_pair(d1, rec1.detach(), t) + _cr_pair(d2, rec2.detach(), t)


def gradient_penalty(
    d,
    real: torch.Tensor,
    fake: torch.Tensor,
    generator: torch.Generator | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Gradient-norm penalty on interpolates between real and fake batches.

    Interpolates x_hat = eps * real + (1 - eps) * fake with per-sample eps
    uniform in [0, 1]; returns mean((||grad_xhat D(x_hat)||_2 - 1)^2).
    Comparison baseline only; not part of the consistency objective.
    """
    if real.shape != fake.shape:
        raise ShapeError("real and fake must have the same shape")
    b = real.shape[0]
    if eps is None:
        eps = torch.rand(b, 1, 1, 1, dtype=real.dtype, generator=generator)
    x_hat = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(True)
    scores = d(x_hat)
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=x_hat, create_graph=True, retain_graph=True
    )[0]
    if not torch.isfinite(grads).all():
        raise NumericError("gradient penalty produced non-finite gradients")
    norms = grads.reshape(b, -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def total_g_value(gan_g1, gan_g2, cyc):
    """Generator objective: adversarial terms plus cycle consistency."""
    return gan_g1 + gan_g2 + cyc


def total_d_value(
    gan_d1,
    gan_d2,
    cr_real_term=0.0,
    cr_fake_term=0.0,
    cr_rec_term=0.0,
    gp_term=0.0,
    *,
    w: LossWeights,
    gp_weight: float = 0.0,
):
    """Discriminator objective: adversarial terms plus weighted regularizers."""
    return (
        gan_d1
        + gan_d2
        + w.lambda_real * cr_real_term
        + w.lambda_fake * cr_fake_term
        + w.lambda_rec * cr_rec_term
        + gp_weight * gp_term
    )


def assemble_objective(
    *,
    gan_g1: float,
    gan_g2: float,
    gan_d1: float,
    gan_d2: float,
    cyc: float,
    cr_real: float = 0.0,
    cr_fake: float = 0.0,
    cr_rec: float = 0.0,
    gp: float = 0.0,
    w: LossWeights,
    gp_weight: float = 0.0,
) -> LossReport:
    """Combine per-term scalars into a full report.

    The generator total excludes consistency terms; the discriminator total
    excludes the cycle term.
    """
    if not isinstance(w, LossWeights):
        w = LossWeights(**w)  # raises ValidationError on negative weights
    report = LossReport(
        gan_g1=float(gan_g1),
        gan_g2=float(gan_g2),
        gan_d1=float(gan_d1),
        gan_d2=float(gan_d2),
        cyc=float(cyc),
        cr_real=float(cr_real),
        cr_fake=float(cr_fake),
        cr_rec=float(cr_rec),
        gp=float(gp),
    )
    report.total_g = float(total_g_value(report.gan_g1, report.gan_g2, report.cyc))
    report.total_d = float(
        total_d_value(
            report.gan_d1,
            report.gan_d2,
            report.cr_real,
            report.cr_fake,
            report.cr_rec,
            report.gp,
            w=w,
            gp_weight=gp_weight,
        )
    )
    return report
