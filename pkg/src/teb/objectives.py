"""Training objectives over a :class:`~teb.nets.StreamBatch`.

Every objective returns a :class:`LossBreakdown` satisfying the arithmetic
identity ``total = kl_term - beta * loglik_term`` exactly as computed, with
both terms averaged over the batch so the bottleneck weight is batch-size
invariant. One latent sample is drawn per example per step; noise comes from
an explicit generator so losses are deterministic given (parameters, batch,
seed).

* :func:`teb_loss` - conditional bottleneck: KL from the posterior
  q(z|x,y) to the learned conditional prior q_y(z|y), against decoder
  log-likelihood.
* :func:`teb_c_loss` - the same bottleneck driven by a frozen pre-trained
  context module; frozen parameters receive exactly zero gradient.
* :func:`baseline_loss` - unconditional-prior, backward-encoder, and
  deterministic baselines over dual- or joint-stream models.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch

from .dist import (
    DiagGaussian,
    kl_diag_gaussian,
    log_likelihood,
    reparam_sample,
    standard_normal_like,
)
from .models import ContextConditionedModel, DualStreamModel
from .nets import StreamBatch


class BaselineKind(str, enum.Enum):
    CEB = "ceb"
    VIB = "vib"
    DETERMINISTIC = "deterministic"
    DETERMINISTIC_JOINT = "deterministic_joint"


@dataclass(frozen=True)
class BaselineSpec:
    kind: BaselineKind = BaselineKind.DETERMINISTIC
    gamma: float = 1.0  # loglik weight for the backward-encoder baseline

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        if self.kind is BaselineKind.CEB and not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class LossBreakdown:
    """total = kl_term - beta * loglik_term, all in nats."""

    total: torch.Tensor
    kl_term: torch.Tensor
    loglik_term: torch.Tensor
    beta: float


def _check_beta(beta: float) -> None:
    # beta = 0 is accepted (pure-compression limit, total = kl_term);
    # negative weights invert the objective and are rejected.
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")


def _assemble(kl_term: torch.Tensor, loglik_term: torch.Tensor, beta: float
              ) -> LossBreakdown:
    return LossBreakdown(
        total=kl_term - beta * loglik_term,
        kl_term=kl_term,
        loglik_term=loglik_term,
        beta=beta,
    )


def teb_loss(
    model: DualStreamModel,
    batch: StreamBatch,
    beta: float,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """Conditional bottleneck loss for the dual-stream model."""
    _check_beta(beta)
    prior, posterior, _ = model.forward_distributions(batch)
    kl_term = kl_diag_gaussian(posterior, prior)
    z = reparam_sample(posterior, standard_normal_like(posterior, generator))
    prediction = model.decode(z, batch)
    loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
    return _assemble(kl_term, loglik_term, beta)


def teb_c_loss(
    model: ContextConditionedModel,
    batch: StreamBatch,
    beta: float,
    generator: torch.Generator | None = None,
    cotrain_context: bool = False,
) -> LossBreakdown:
    """Bottleneck loss against a pre-trained context module.

    With ``cotrain_context=False`` (the default and the contract this loss
    is named for) the context module must be frozen: the prior and context
    are computed without gradient and every frozen parameter receives
    exactly zero gradient from the backward pass. With
    ``cotrain_context=True`` the context module participates in the
    gradient and the caller is expected to add its own pre-training loss so
    the context stays predictive of the target (see
    :func:`context_module_loss`).
    """
    _check_beta(beta)
    if cotrain_context:
        prior, posterior, _ = model.distributions_with_live_context(batch)
    else:
        prior, posterior, _ = model.forward_distributions(batch)
    kl_term = kl_diag_gaussian(posterior, prior)
    z = reparam_sample(posterior, standard_normal_like(posterior, generator))
    prediction = model.decode(z, batch)
    loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
    return _assemble(kl_term, loglik_term, beta)


def context_module_loss(
    module, batch: StreamBatch, gamma: float = 1.0,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """Pre-training loss for a :class:`~teb.models.ContextModule`.

    Backward-encoder objective on the target stream alone: KL from the
    history-conditioned prior to the target-conditioned backward encoding,
    minus gamma times the decoder log-likelihood of the next target value
    under a latent drawn from the prior.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    prior, _ = module.prior_and_context(batch.y_hist)
    backward = module.backward_encode(batch.y_next)
    kl_term = kl_diag_gaussian(prior, backward)
    z = reparam_sample(prior, standard_normal_like(prior, generator))
    prediction = module.decode(z, batch)
    loglik_term = log_likelihood(batch.y_next, prediction, module.output_spec)
    return _assemble(kl_term, loglik_term, gamma)


def baseline_loss(
    spec: BaselineSpec,
    model,
    batch: StreamBatch,
    weight: float = 1.0,
    generator: torch.Generator | None = None,
) -> LossBreakdown:
    """Baseline objectives.

    ``vib``: KL from the encoder to a fixed standard-normal prior, minus
    ``weight`` times the log-likelihood. ``ceb``: KL from the forward
    encoder to the backward encoding of the target, minus ``spec.gamma``
    times the log-likelihood. ``deterministic`` (dual-stream posterior mean)
    and ``deterministic_joint`` (unified-input deterministic latent): pure
    negative log-likelihood with the KL term reported as zero.
    """
    kind = spec.kind
    if kind is BaselineKind.DETERMINISTIC:
        _, posterior, _ = model.forward_distributions(batch)
        z = posterior.mean
        prediction = model.decode(z, batch)
        loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
        return _assemble(torch.zeros_like(loglik_term), loglik_term, 1.0)
    if kind is BaselineKind.DETERMINISTIC_JOINT:
        z = model.encode(batch)
        if isinstance(z, DiagGaussian):
            z = z.mean
        prediction = model.decode(z, batch)
        loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
        return _assemble(torch.zeros_like(loglik_term), loglik_term, 1.0)
    if kind is BaselineKind.VIB:
        _check_beta(weight)
        encoding = model.encode(batch)
        standard = DiagGaussian(
            torch.zeros_like(encoding.mean), torch.zeros_like(encoding.log_var)
        )
        kl_term = kl_diag_gaussian(encoding, standard)
        z = reparam_sample(encoding, standard_normal_like(encoding, generator))
        prediction = model.decode(z, batch)
        loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
        return _assemble(kl_term, loglik_term, weight)
    if kind is BaselineKind.CEB:
        encoding = model.encode(batch)
        backward = model.backward_encode(batch.y_next)
        kl_term = kl_diag_gaussian(encoding, backward)
        z = reparam_sample(encoding, standard_normal_like(encoding, generator))
        prediction = model.decode(z, batch)
        loglik_term = log_likelihood(batch.y_next, prediction, model.output_spec)
        return _assemble(kl_term, loglik_term, spec.gamma)
    raise ValueError(f"unknown baseline kind {kind!r}")


def frozen_parameter_grad_norm(model: ContextConditionedModel) -> float:
    """Total gradient norm over the context module's parameters (0 when the
    stop-gradient contract holds)."""
    total = 0.0
    for p in model.context_module.parameters():
        if p.grad is not None:
            total += float(p.grad.pow(2).sum())
    return total ** 0.5


__all__ = [
    "BaselineKind",
    "BaselineSpec",
    "LossBreakdown",
    "baseline_loss",
    "context_module_loss",
    "frozen_parameter_grad_norm",
    "teb_c_loss",
    "teb_loss",
]
