"""Differentiable probability primitives.

Diagonal-covariance Gaussians (the carrier of the conditional prior and
posterior over the latent), reparameterized sampling, and the two output
likelihoods used by the decoders. Everything here is a pure function of
tensors and is safe to call concurrently.

Conventions fixed across the package:
  * all log-quantities are in nats,
  * reductions sum over feature/pixel/time axes and average over the batch
    axis (axis 0), so loss scales are batch-size invariant,
  * log-variances are clamped to [-20, 20] before exponentiation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 20.0


class OutputKind(str, enum.Enum):
    GAUSSIAN_FIXED_VAR = "gaussian_fixed_var"
    BERNOULLI_LOGITS = "bernoulli_logits"


@dataclass(frozen=True)
class OutputDistSpec:
    """How decoder outputs are interpreted as a distribution over targets.

    ``gaussian_fixed_var``: outputs are per-element means of independent
    Gaussians with a shared fixed variance. ``bernoulli_logits``: outputs are
    per-element logits of independent Bernoullis; targets must lie in [0, 1].
    """

    kind: OutputKind = OutputKind.GAUSSIAN_FIXED_VAR
    fixed_variance: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OutputKind(self.kind))
        if not self.fixed_variance > 0:
            raise ValueError(f"fixed_variance must be > 0, got {self.fixed_variance}")


@dataclass
class DiagGaussian:
    """Diagonal Gaussian N(mean, diag(exp(log_var))) over the last axis.

    ``mean`` and ``log_var`` share a shape ``(..., d)``; leading axes are
    treated as batch axes by the operations below.
    """

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_var.shape:
            raise ValueError(
                f"mean and log_var shapes differ: {tuple(self.mean.shape)} "
                f"vs {tuple(self.log_var.shape)}"
            )
        if self.mean.ndim < 1 or self.mean.shape[-1] < 1:
            raise ValueError("latent dimension must be >= 1")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def clamped_log_var(self) -> torch.Tensor:
        return torch.clamp(self.log_var, LOG_VAR_MIN, LOG_VAR_MAX)

    def variance(self) -> torch.Tensor:
        return torch.exp(self.clamped_log_var())

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.log_var.detach())


def _require_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite values in {name}")


def kl_diag_gaussian_per_example(q: DiagGaussian, p: DiagGaussian) -> torch.Tensor:
    """KL(q || p) in nats, summed over the latent axis only.

    Returns a tensor of the leading (batch) shape; for unbatched inputs of
    shape ``(d,)`` the result is a scalar.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(
            f"distribution shapes differ: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}"
        )
    _require_finite("kl_diag_gaussian inputs", q.mean, q.log_var, p.mean, p.log_var)
    q_lv, p_lv = q.clamped_log_var(), p.clamped_log_var()
    var_ratio = torch.exp(q_lv - p_lv)
    mean_term = (q.mean - p.mean) ** 2 * torch.exp(-p_lv)
    return 0.5 * torch.sum(p_lv - q_lv + var_ratio + mean_term - 1.0, dim=-1)


def kl_diag_gaussian(q: DiagGaussian, p: DiagGaussian) -> torch.Tensor:
    """KL(q || p) in nats: summed over the latent axis, averaged over batch axes."""
    return kl_diag_gaussian_per_example(q, p).mean()


def reparam_sample(d: DiagGaussian, eps: torch.Tensor) -> torch.Tensor:
    """Location-scale sample mean + std * eps, differentiable in mean/log_var."""
    if eps.shape != d.mean.shape:
        raise ValueError(
            f"eps shape {tuple(eps.shape)} != distribution shape {tuple(d.mean.shape)}"
        )
    std = torch.exp(0.5 * d.clamped_log_var())
    return d.mean + std * eps


def standard_normal_like(
    d: DiagGaussian, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Draw eps ~ N(0, I) with the distribution's shape (explicit noise source)."""
    return torch.randn(
        d.mean.shape, generator=generator, dtype=d.mean.dtype, device=d.mean.device
    )


def log_likelihood_per_example(
    target: torch.Tensor, prediction: torch.Tensor, spec: OutputDistSpec
) -> torch.Tensor:
    """Log-likelihood per batch element (nats, summed over non-batch axes).

    Axis 0 of ``target``/``prediction`` is the batch axis. For
    ``gaussian_fixed_var``, ``prediction`` holds means; for
    ``bernoulli_logits`` it holds logits and targets must lie in [0, 1].
    """
    if target.shape != prediction.shape:
        raise ValueError(
            f"target shape {tuple(target.shape)} != prediction shape "
            f"{tuple(prediction.shape)}"
        )
    flat_t = target.reshape(target.shape[0], -1)
    flat_p = prediction.reshape(prediction.shape[0], -1)
    if spec.kind is OutputKind.GAUSSIAN_FIXED_VAR:
        v = spec.fixed_variance
        const = -0.5 * math.log(2.0 * math.pi * v)
        ll = const - (flat_t - flat_p) ** 2 / (2.0 * v)
        return ll.sum(dim=-1)
    if spec.kind is OutputKind.BERNOULLI_LOGITS:
        if torch.any(flat_t < 0) or torch.any(flat_t > 1):
            raise ValueError("bernoulli targets must lie in [0, 1]")
        nll = F.binary_cross_entropy_with_logits(flat_p, flat_t, reduction="none")
        return -nll.sum(dim=-1)
    raise ValueError(f"unknown output kind {spec.kind!r}")


def log_likelihood(
    target: torch.Tensor, prediction: torch.Tensor, spec: OutputDistSpec
) -> torch.Tensor:
    """Log-likelihood in nats: summed over elements, averaged over the batch."""
    return log_likelihood_per_example(target, prediction, spec).mean()
