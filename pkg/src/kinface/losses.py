"""Loss primitives shared by the parent and children domains.

The adversarial terms follow the Wasserstein critic form; the Lipschitz
constraint defaults to a gradient penalty (weight 10), with weight clipping
available as a config alternative handled by the trainer.
"""

from __future__ import annotations

import torch

from .exceptions import ValidationError

_LOG_EPS = 1e-12

DEFAULT_GP_WEIGHT = 10.0


def mean_abs_error(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        from .exceptions import ShapeError

        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def attribute_bce(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy averaged over batch and attributes."""
    if probs.shape != targets.shape:
        from .exceptions import ShapeError

        raise ShapeError(f"classifier output shape {tuple(probs.shape)} != targets {tuple(targets.shape)}")
    if not torch.all((targets == 0) | (targets == 1)):
        raise ValidationError("attribute targets must be binary")
    p = probs.clamp(_LOG_EPS, 1.0 - _LOG_EPS)
    return -(targets * p.log() + (1.0 - targets) * (1.0 - p).log()).mean()


def critic_generator_term(critic_fake: torch.Tensor) -> torch.Tensor:
    """Generator side of the Wasserstein objective: -E[D(fake)]."""
    return -critic_fake.mean()


def critic_discriminator_term(critic_fake: torch.Tensor, critic_real: torch.Tensor) -> torch.Tensor:
    """Critic side: E[D(fake)] - E[D(real)]."""
    return critic_fake.mean() - critic_real.mean()


def gradient_penalty(
    critic_fn,
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: torch.Generator | None = None,
    weight: float = DEFAULT_GP_WEIGHT,
) -> torch.Tensor:
    """Two-sided unit-norm gradient penalty on random interpolates.

    Without an rng the midpoint interpolate is used, which keeps the value
    deterministic for tests.
    """
    if real.shape != fake.shape:
        from .exceptions import ShapeError

        raise ShapeError(f"real/fake shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    n = real.shape[0]
    eps_shape = (n,) + (1,) * (real.dim() - 1)
    if rng is None:
        eps = torch.full(eps_shape, 0.5)
    else:
        eps = torch.rand(eps_shape, generator=rng)
    interp = (eps * real + (1.0 - eps) * fake.detach()).requires_grad_(True)
    scores = critic_fn(interp)
    grads = torch.autograd.grad(scores.sum(), interp, create_graph=True)[0]
    norms = grads.reshape(n, -1).norm(2, dim=1)
    return weight * ((norms - 1.0) ** 2).mean()


def wasserstein_pair(
    critic_fn,
    real: torch.Tensor,
    fake: torch.Tensor,
    gp_weight: float = DEFAULT_GP_WEIGHT,
    rng: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(generator term, critic term incl. penalty) for one real/fake batch."""
    critic_fake = critic_fn(fake)
    critic_real = critic_fn(real)
    g_term = critic_generator_term(critic_fake)
    d_term = critic_discriminator_term(critic_fake, critic_real)
    if gp_weight:
        d_term = d_term + gradient_penalty(critic_fn, real, fake, rng=rng, weight=gp_weight)
    return g_term, d_term


def weighted_sum(terms, lambdas) -> torch.Tensor:
    """Coefficient-weighted loss total; rejects non-finite terms."""
    if len(terms) != len(lambdas):
        raise ValidationError(f"{len(terms)} terms but {len(lambdas)} coefficients")
    total = None
    for term, lam in zip(terms, lambdas):
        t = term if isinstance(term, torch.Tensor) else torch.as_tensor(float(term))
        if not torch.isfinite(t).all():
            from .exceptions import DivergenceError

            raise DivergenceError(f"non-finite loss term: {t}")
        total = lam * t if total is None else total + lam * t
    return total
