import numpy as np
import pytest
import torch

from teb.dist import OutputDistSpec, OutputKind
from teb.models import DataShapes
from teb.nets import EncoderKind, DecoderKind, ModelSpec, StreamBatch


@pytest.fixture(autouse=True)
def _single_thread_torch():
    torch.set_num_threads(1)


def tiny_image_spec(latent_dim=6, output_kind=OutputKind.GAUSSIAN_FIXED_VAR):
    return ModelSpec(
        latent_dim=latent_dim,
        y_encoder=EncoderKind.SMALL_CONV,
        x_encoder=EncoderKind.EMBEDDING_TABLE,
        decoder=DecoderKind.POSITIONAL_CONV_IMAGE,
        output=OutputDistSpec(output_kind, fixed_variance=0.1),
        conv_channels=(3, 4),
        decoder_channels=(4,),
        decoder_kernels=(3,),
    )


def tiny_series_spec(latent_dim=5):
    return ModelSpec(
        latent_dim=latent_dim,
        y_encoder=EncoderKind.IDENTITY,
        x_encoder=EncoderKind.IDENTITY,
        decoder=DecoderKind.ODE_TIMESERIES,
        output=OutputDistSpec(OutputKind.GAUSSIAN_FIXED_VAR, fixed_variance=0.1),
        ode_hidden=8,
    )


def tiny_image_shapes(num_classes=4, size=7):
    return DataShapes(
        x_step=(), y_step=(1, size, size), y_next=(1, size, size),
        num_classes=num_classes,
    )


def tiny_series_shapes(horizon=6, hist=10):
    return DataShapes(x_step=(3,), y_step=(1,), y_next=(horizon + 1,))


def tiny_image_batch(batch=3, num_classes=4, size=7, seed=0):
    g = torch.Generator().manual_seed(seed)
    return StreamBatch(
        x_hist=torch.randint(0, num_classes, (batch, 2), generator=g),
        y_hist=torch.rand((batch, 2, 1, size, size), generator=g),
        y_next=torch.rand((batch, 1, size, size), generator=g),
        meta={"switch": torch.zeros(batch, dtype=torch.bool)},
    )


def tiny_series_batch(batch=3, hist=10, horizon=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    return StreamBatch(
        x_hist=torch.rand((batch, hist, 3), generator=g),
        y_hist=torch.rand((batch, hist, 1), generator=g),
        y_next=torch.rand((batch, horizon + 1), generator=g),
    )
