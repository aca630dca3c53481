"""Assembled architectures for dual-stream and joint-stream prediction.

Three model families share the building blocks from :mod:`teb.nets`:

* :class:`DualStreamModel` - the bottleneck architecture proper: separate
  source/target pathways, a learned conditional prior over the latent from
  the target pathway, and a combiner that perturbs that prior with source
  information to form the posterior.
* :class:`JointStreamModel` - baselines that consume a single unified input
  stream, with a deterministic or stochastic latent head and an optional
  backward encoder on the prediction target.
* :class:`ContextModule` / :class:`ContextConditionedModel` - a
  target-history-only module (pre-trainable on its own) and the model that
  consumes its frozen context and prior, training only a source pathway.

Models expose ``forward_distributions(batch)`` / ``encode(batch)`` and
``decode(z, batch)``; objectives and metrics are built on those two calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .dist import DiagGaussian, OutputDistSpec
from .nets import (
    Combiner,
    DecoderKind,
    EncoderKind,
    ImageDecoder,
    ModelSpec,
    OdeDecoder,
    PriorHead,
    SequenceEncoder,
    SmallConvEncoder,
    StreamBatch,
)


@dataclass(frozen=True)
class DataShapes:
    """Per-step shapes and label info a model needs to size its layers.

    ``x_step`` / ``y_step`` are the shapes of one sequence step (image
    ``(c, h, w)``, vector ``(d,)``, or ``()`` for integer labels);
    ``y_next`` is the full target shape. ``num_classes`` is nonzero for
    tasks with class labels.
    """

    x_step: tuple[int, ...]
    y_step: tuple[int, ...]
    y_next: tuple[int, ...]
    num_classes: int = 0

    @staticmethod
    def from_manifest(meta: dict) -> "DataShapes":
        return DataShapes(
            x_step=tuple(meta["x_step_shape"]),
            y_step=tuple(meta["y_step_shape"]),
            y_next=tuple(meta["y_next_shape"]),
            num_classes=int(meta.get("num_classes", 0)),
        )


def _sequence_encoder(kind: EncoderKind, hidden: int, step_shape: tuple[int, ...],
                      num_classes: int, conv_channels: tuple[int, ...]
                      ) -> SequenceEncoder:
    if kind is EncoderKind.SMALL_CONV:
        if len(step_shape) != 3:
            raise ValueError(f"small_conv expects (c,h,w) steps, got {step_shape}")
        return SequenceEncoder(
            kind, hidden, in_channels=step_shape[0], image_size=step_shape[1],
            conv_channels=conv_channels,
        )
    if kind is EncoderKind.EMBEDDING_TABLE:
        return SequenceEncoder(kind, hidden, num_classes=num_classes)
    in_dim = 1 if len(step_shape) == 0 else math.prod(step_shape)
    return SequenceEncoder(kind, hidden, in_dim=in_dim)


def _decoder(spec: ModelSpec, y_next_shape: tuple[int, ...]) -> nn.Module:
    if spec.decoder is DecoderKind.POSITIONAL_CONV_IMAGE:
        if len(y_next_shape) != 3:
            raise ValueError(
                f"image decoder needs a (c,h,w) target, got {y_next_shape}"
            )
        return ImageDecoder(
            spec.latent_dim, y_next_shape, spec.decoder_channels, spec.decoder_kernels
        )
    if len(y_next_shape) != 1:
        raise ValueError(f"time-series decoder needs a 1-d target, got {y_next_shape}")
    return OdeDecoder(spec.latent_dim, spec.ode_hidden)


def _decode_with(decoder: nn.Module, z: torch.Tensor, batch: StreamBatch
                 ) -> torch.Tensor:
    if isinstance(decoder, OdeDecoder):
        horizon = batch.y_next.shape[1] - 1
        y_last = batch.y_hist[:, -1].reshape(len(batch))
        return decoder(z, horizon, y_last)
    return decoder(z)


class DualStreamModel(nn.Module):
    """Source + target pathways with a conditional-prior bottleneck."""

    def __init__(self, spec: ModelSpec, shapes: DataShapes):
        super().__init__()
        self.spec = spec
        self.output_spec: OutputDistSpec = spec.output
        d = spec.latent_dim
        self.y_pathway = _sequence_encoder(
            spec.y_encoder, d, shapes.y_step, shapes.num_classes, spec.conv_channels
        )
        self.x_pathway = _sequence_encoder(
            spec.x_encoder, d, shapes.x_step, shapes.num_classes, spec.conv_channels
        )
        self.prior_head = PriorHead(d, d)
        self.combiner = Combiner(d, d, spec.combiner, spec.combiner_hidden)
        self.decoder = _decoder(spec, shapes.y_next)

    def forward_distributions(
        self, batch: StreamBatch
    ) -> tuple[DiagGaussian, DiagGaussian, torch.Tensor]:
        """Return (prior q_y(z|y), posterior q(z|x,y), context feature)."""
        hidden_y = self.y_pathway(batch.y_hist)
        prior, context = self.prior_head(hidden_y)
        hidden_x = self.x_pathway(batch.x_hist)
        posterior = self.combiner(context, hidden_x, prior)
        return prior, posterior, context

    def decode(self, z: torch.Tensor, batch: StreamBatch) -> torch.Tensor:
        return _decode_with(self.decoder, z, batch)


class JointStreamModel(nn.Module):
    """Unified-input baseline with a deterministic or stochastic latent head.

    The unified input is the source stream when its steps already contain
    the target frames (stacked-channel video tasks) and the per-step
    concatenation of both streams for vector time-series. A backward
    encoder over the prediction target is attached when requested so the
    model can be trained with a target-conditioned reference distribution.
    """

    def __init__(self, spec: ModelSpec, shapes: DataShapes, *,
                 stochastic: bool, with_backward_encoder: bool = False):
        super().__init__()
        self.spec = spec
        self.output_spec = spec.output
        self.stochastic = stochastic
        d = spec.latent_dim
        if len(shapes.x_step) == 3:
            self.joint_mode = "source_only"
            step_shape = shapes.x_step
        elif len(shapes.x_step) <= 1 and len(shapes.y_step) <= 1:
            self.joint_mode = "concat"
            x_dim = shapes.x_step[0] if shapes.x_step else 1
            y_dim = shapes.y_step[0] if shapes.y_step else 1
            step_shape = (x_dim + y_dim,)
        else:
            raise ValueError(
                "joint-stream baselines need image steps in the source stream "
                "or vector steps in both streams"
            )
        self.encoder = _sequence_encoder(
            EncoderKind.SMALL_CONV if len(step_shape) == 3 else EncoderKind.IDENTITY,
            d, step_shape, 0, spec.conv_channels,
        )
        self.head = nn.Linear(d, 2 * d if stochastic else d)
        if with_backward_encoder:
            if len(shapes.y_next) == 3:
                self.backward_featurizer = SmallConvEncoder(
                    shapes.y_next[0], shapes.y_next[1], d, spec.conv_channels
                )
            else:
                self.backward_featurizer = nn.Sequential(
                    nn.Linear(shapes.y_next[0], d), nn.ReLU()
                )
            self.backward_head = nn.Linear(d, 2 * d)
        else:
            self.backward_featurizer = None
        self.decoder = _decoder(spec, shapes.y_next)

    def _unified(self, batch: StreamBatch) -> torch.Tensor:
        if self.joint_mode == "source_only":
            return batch.x_hist
        b, t = batch.y_hist.shape[0], batch.y_hist.shape[1]
        y = batch.y_hist.reshape(b, t, -1)
        x = batch.x_hist.reshape(b, t, -1)
        return torch.cat([y, x], dim=-1)

    def encode(self, batch: StreamBatch) -> DiagGaussian | torch.Tensor:
        hidden = self.encoder(self._unified(batch))
        out = self.head(hidden)
        if not self.stochastic:
            return out
        mean, log_var = torch.chunk(out, 2, dim=-1)
        return DiagGaussian(mean, log_var)

    def backward_encode(self, y_next: torch.Tensor) -> DiagGaussian:
        if self.backward_featurizer is None:
            raise ValueError("model was built without a backward encoder")
        feats = self.backward_featurizer(y_next)
        mean, log_var = torch.chunk(self.backward_head(feats), 2, dim=-1)
        return DiagGaussian(mean, log_var)

    def decode(self, z: torch.Tensor, batch: StreamBatch) -> torch.Tensor:
        return _decode_with(self.decoder, z, batch)


class ContextModule(nn.Module):
    """Target-history-only module: conditional prior, context, and decoder.

    Pre-trained on its own (no source stream) to predict the next target
    value from a latent drawn from its prior, with a backward encoder on the
    target providing the reference distribution during pre-training. Once
    trained it can be frozen and plugged into a
    :class:`ContextConditionedModel` as the supplier of context and prior.
    """

    def __init__(self, spec: ModelSpec, shapes: DataShapes):
        super().__init__()
        self.spec = spec
        self.output_spec = spec.output
        d = spec.latent_dim
        self.y_pathway = _sequence_encoder(
            spec.y_encoder, d, shapes.y_step, shapes.num_classes, spec.conv_channels
        )
        self.prior_head = PriorHead(d, d)
        if len(shapes.y_next) == 3:
            self.backward_featurizer = SmallConvEncoder(
                shapes.y_next[0], shapes.y_next[1], d, spec.conv_channels
            )
        else:
            self.backward_featurizer = nn.Sequential(
                nn.Linear(shapes.y_next[0], d), nn.ReLU()
            )
        self.backward_head = nn.Linear(d, 2 * d)
        self.decoder = _decoder(spec, shapes.y_next)

    def prior_and_context(self, y_hist: torch.Tensor
                          ) -> tuple[DiagGaussian, torch.Tensor]:
        hidden = self.y_pathway(y_hist)
        return self.prior_head(hidden)

    def backward_encode(self, y_next: torch.Tensor) -> DiagGaussian:
        feats = self.backward_featurizer(y_next)
        mean, log_var = torch.chunk(self.backward_head(feats), 2, dim=-1)
        return DiagGaussian(mean, log_var)

    def decode(self, z: torch.Tensor, batch: StreamBatch) -> torch.Tensor:
        return _decode_with(self.decoder, z, batch)

    def freeze(self) -> "ContextModule":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class ContextConditionedModel(nn.Module):
    """Bottleneck model on top of a frozen pre-trained context module.

    Only the source pathway and combiner (plus optionally a fresh decoder)
    are trainable; the context module supplies prior and context feature and
    receives no gradient. With ``reuse_decoder=True`` the frozen module's
    decoder is used for reconstruction as well.
    """

    def __init__(self, spec: ModelSpec, shapes: DataShapes,
                 context_module: ContextModule, reuse_decoder: bool = True,
                 freeze_context: bool = True):
        super().__init__()
        if context_module.spec.latent_dim != spec.latent_dim:
            raise ValueError(
                f"latent width mismatch: context module has "
                f"{context_module.spec.latent_dim}, model wants {spec.latent_dim}"
            )
        self.spec = spec
        self.output_spec = spec.output
        d = spec.latent_dim
        self.frozen_context = freeze_context
        self.context_module = context_module.freeze() if freeze_context else (
            context_module)
        self.x_pathway = _sequence_encoder(
            spec.x_encoder, d, shapes.x_step, shapes.num_classes, spec.conv_channels
        )
        self.combiner = Combiner(d, d, spec.combiner, spec.combiner_hidden)
        self.reuse_decoder = reuse_decoder
        self.own_decoder = None if reuse_decoder else _decoder(spec, shapes.y_next)

    def forward_distributions(
        self, batch: StreamBatch
    ) -> tuple[DiagGaussian, DiagGaussian, torch.Tensor]:
        with torch.no_grad():
            prior, context = self.context_module.prior_and_context(batch.y_hist)
        prior, context = prior.detach(), context.detach()
        hidden_x = self.x_pathway(batch.x_hist)
        posterior = self.combiner(context, hidden_x, prior)
        return prior, posterior, context

    def distributions_with_live_context(
        self, batch: StreamBatch
    ) -> tuple[DiagGaussian, DiagGaussian, torch.Tensor]:
        """Same as forward_distributions but without detaching the context
        module, for the co-training variant where the prior keeps learning."""
        prior, context = self.context_module.prior_and_context(batch.y_hist)
        hidden_x = self.x_pathway(batch.x_hist)
        posterior = self.combiner(context, hidden_x, prior)
        return prior, posterior, context

    def decode(self, z: torch.Tensor, batch: StreamBatch) -> torch.Tensor:
        decoder = self.context_module.decoder if self.reuse_decoder else (
            self.own_decoder)
        return _decode_with(decoder, z, batch)

    def trainable_parameters(self):
        return (p for p in self.parameters() if p.requires_grad)
