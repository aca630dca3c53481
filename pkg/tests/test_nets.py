import math

import numpy as np
import pytest
import torch

from teb.dist import DiagGaussian, kl_diag_gaussian
from teb.nets import (
    Combiner,
    EncoderKind,
    ImageDecoder,
    OdeDecoder,
    PriorHead,
    SequenceEncoder,
    grad_check,
    grad_check_module,
    positional_grid,
    rk4_integrate,
)


class TestSequenceEncoder:
    def test_output_shape_and_determinism(self):
        torch.manual_seed(0)
        enc = SequenceEncoder(
            EncoderKind.SMALL_CONV, 16, in_channels=1, image_size=8,
            conv_channels=(3, 4),
        )
        x = torch.rand(2, 3, 1, 8, 8)
        out = enc(x)
        assert out.shape == (2, 16)
        assert torch.equal(out, enc(x))

    def test_embedding_kind(self):
        torch.manual_seed(0)
        enc = SequenceEncoder(EncoderKind.EMBEDDING_TABLE, 8, num_classes=5)
        out = enc(torch.tensor([[0, 3], [4, 1]]))
        assert out.shape == (2, 8)

    def test_identity_kind_accepts_2d(self):
        enc = SequenceEncoder(EncoderKind.IDENTITY, 8, in_dim=1)
        out = enc(torch.rand(4, 10))
        assert out.shape == (4, 8)

    def test_empty_sequence_rejected(self):
        enc = SequenceEncoder(EncoderKind.IDENTITY, 4, in_dim=2)
        with pytest.raises(ValueError):
            enc(torch.rand(2, 0, 2))


class TestPriorHead:
    def test_chunk_shapes(self):
        head = PriorHead(16, 16)
        prior, context = head(torch.rand(5, 16))
        assert prior.mean.shape == (5, 16)
        assert prior.log_var.shape == (5, 16)
        assert context.shape == (5, 16)

    def test_zero_projection_gives_standard_normal(self):
        head = PriorHead(8, 4)
        with torch.no_grad():
            head.proj.weight.zero_()
            head.proj.bias.zero_()
        prior, _ = head(torch.rand(3, 8))
        assert torch.all(prior.mean == 0)
        assert torch.all(prior.log_var == 0)

    def test_gradient_flows_from_kl(self):
        head = PriorHead(8, 4)
        hidden = torch.rand(3, 8)
        prior, _ = head(hidden)
        reference = DiagGaussian(torch.ones(3, 4), torch.zeros(3, 4))
        kl_diag_gaussian(prior, reference).backward()
        assert head.proj.weight.grad is not None
        assert head.proj.weight.grad.abs().sum() > 0


class TestCombiner:
    def test_initialization_contract(self):
        torch.manual_seed(1)
        comb = Combiner(2, 6)
        prior = DiagGaussian(torch.tensor([[1.0, 2.0]]), torch.tensor([[0.4, -0.3]]))
        post = comb(torch.rand(1, 2), torch.rand(1, 6), prior)
        assert torch.allclose(post.mean, prior.mean)
        assert torch.allclose(post.variance(), torch.full((1, 2), 1e-7))

    def test_mean_is_additive_shift(self):
        comb = Combiner(2, 2)
        with torch.no_grad():
            comb.out.weight.zero_()
            comb.out.bias[:2] = torch.tensor([0.5, -0.5])
        prior = DiagGaussian(torch.tensor([[1.0, 2.0]]), torch.zeros(1, 2))
        post = comb(torch.zeros(1, 2), torch.zeros(1, 2), prior)
        assert torch.allclose(post.mean, torch.tensor([[1.5, 1.5]]))

    def test_log_var_independent_of_prior_log_var(self):
        torch.manual_seed(2)
        comb = Combiner(3, 4)
        ctx, hx = torch.rand(2, 3), torch.rand(2, 4)
        p1 = DiagGaussian(torch.zeros(2, 3), torch.zeros(2, 3))
        p2 = DiagGaussian(torch.zeros(2, 3), torch.full((2, 3), 3.0))
        assert torch.equal(comb(ctx, hx, p1).log_var, comb(ctx, hx, p2).log_var)

    def test_direct_variant(self):
        comb = Combiner(3, 4, kind="direct")
        prior = DiagGaussian(torch.zeros(2, 3), torch.zeros(2, 3))
        post = comb(torch.rand(2, 3), torch.rand(2, 4), prior)
        assert torch.allclose(post.mean, prior.mean)  # zero-init shift


class TestPositionalGrid:
    def test_corner_convention(self):
        grid = positional_grid(28, 28)
        assert grid.shape == (4, 28, 28)
        assert torch.equal(grid[:, 0, 0], torch.tensor([0.0, 1.0, 0.0, 1.0]))
        assert torch.equal(grid[:, 27, 27], torch.tensor([1.0, 0.0, 1.0, 0.0]))

    def test_range(self):
        grid = positional_grid(5, 9)
        assert grid.min() >= 0 and grid.max() <= 1


class TestImageDecoder:
    def test_output_shape(self):
        torch.manual_seed(0)
        dec = ImageDecoder(6, (1, 11, 11), channels=(4,), kernels=(3,))
        out = dec(torch.rand(3, 6))
        assert out.shape == (3, 1, 11, 11)

    @pytest.mark.parametrize("kernels", [(3,), (5,), (7,)])
    def test_space_preserving_any_kernel(self, kernels):
        dec = ImageDecoder(4, (2, 9, 9), channels=(3,), kernels=kernels)
        assert dec(torch.rand(2, 4)).shape == (2, 2, 9, 9)

    def test_zeroed_input_weights_ignore_z(self):
        torch.manual_seed(0)
        dec = ImageDecoder(4, (1, 7, 7), channels=(3,), kernels=(3,))
        dec.eval()
        first_conv = dec.body[1]
        with torch.no_grad():
            first_conv.weight[:, 2, :, :] = 0.0  # kill latent unit 2 everywhere
        z1 = torch.rand(1, 4)
        z2 = z1.clone()
        z2[0, 2] += 5.0
        assert torch.allclose(dec(z1), dec(z2))

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            ImageDecoder(4, (0, 7, 7))


class TestRk4:
    def test_rotation_field_matches_analytic(self):
        # dh/dt = [[0, w], [-w, 0]] h with w = 2*pi*0.2 traces
        # h(t) = (cos(phi - w t), sin(phi - w t)); 0.05-step RK4 stays
        # within 1e-4 of the closed form over [0, 1].
        freq = 0.2
        w = 2 * math.pi * freq
        phi = 0.7

        def field(h):
            return torch.stack([w * h[..., 1], -w * h[..., 0]], dim=-1)

        h0 = torch.tensor([[math.cos(phi), math.sin(phi)]], dtype=torch.float64)
        traj = rk4_integrate(field, h0, 0.0, 1.0, 20)
        t = torch.linspace(0, 1, 21, dtype=torch.float64)
        expected = torch.stack([torch.cos(phi - w * t), torch.sin(phi - w * t)], -1)
        err = (traj[:, 0, :] - expected).abs().max().item()
        assert err < 1e-4

    def test_zero_field_constant(self):
        h0 = torch.tensor([[1.0, -2.0]])
        traj = rk4_integrate(lambda h: torch.zeros_like(h), h0, 0.0, 1.0, 10)
        assert torch.equal(traj, h0.expand(11, 1, 2).clone())

    def test_bad_steps(self):
        with pytest.raises(ValueError):
            rk4_integrate(lambda h: h, torch.zeros(1, 2), 0.0, 1.0, 0)


class TestOdeDecoder:
    def test_output_length_and_first_element(self):
        torch.manual_seed(0)
        dec = OdeDecoder(5, hidden=8)
        z = torch.rand(4, 5)
        y_last = torch.tensor([1.0, 2.0, 3.0, 4.0])
        out = dec(z, 20, y_last)
        assert out.shape == (4, 21)
        assert torch.equal(out[:, 0], y_last)

    def test_zero_dynamics_constant_readout(self):
        torch.manual_seed(0)
        dec = OdeDecoder(3, hidden=4)
        with torch.no_grad():
            for p in dec.dynamics.parameters():
                p.zero_()
        out = dec(torch.rand(2, 3), 5, torch.zeros(2))
        tail = out[:, 1:]
        assert torch.allclose(tail, tail[:, :1].expand_as(tail))

    def test_nonpositive_horizon(self):
        dec = OdeDecoder(3, hidden=4)
        with pytest.raises(ValueError):
            dec(torch.rand(1, 3), 0, torch.zeros(1))


class TestGradCheck:
    def test_kl_gradcheck(self):
        rng = np.random.default_rng(0)
        qm = torch.as_tensor(rng.normal(size=4))
        qlv = torch.as_tensor(rng.uniform(-1, 1, 4))
        pm = torch.as_tensor(rng.normal(size=4))
        plv = torch.as_tensor(rng.uniform(-1, 1, 4))

        def op(a, b, c, d):
            return kl_diag_gaussian(DiagGaussian(a, b), DiagGaussian(c, d))

        report = grad_check(op, [qm, qlv, pm, plv])
        assert report.passed
        assert report.max_rel_error < 1e-6

    def test_constant_function(self):
        report = grad_check(lambda x: (x * 0.0).sum(), [torch.rand(3)])
        assert report.passed
        assert report.max_rel_error == 0.0

    def test_corrupted_gradient_fails(self):
        class BadGrad(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x.sum()

            @staticmethod
            def backward(ctx, g):
                return g * torch.tensor(1.0) + 1.0  # off by +1 per coordinate

        report = grad_check(lambda x: BadGrad.apply(x), [torch.rand(3)])
        assert not report.passed

    def test_nondifferentiable_point_reported(self):
        # |x| summed, with a coordinate pinned inside the finite-difference
        # stencil of the kink
        x = torch.tensor([1e-6, 0.5])
        report = grad_check(lambda t: t.abs().sum(), [x], step=1e-5)
        assert report.suspect_nondifferentiable
        assert not report.passed

    def test_module_gradcheck_combiner(self):
        torch.manual_seed(0)
        comb = Combiner(2, 3)
        # move off the all-zeros initialization so the check is nontrivial
        with torch.no_grad():
            for p in comb.parameters():
                p.add_(torch.randn_like(p) * 0.3)
        ctx = torch.rand(2, 2, dtype=torch.float64)
        hx = torch.rand(2, 3, dtype=torch.float64)
        prior = DiagGaussian(
            torch.rand(2, 2, dtype=torch.float64),
            torch.rand(2, 2, dtype=torch.float64),
        )

        def loss(call):
            post = call(ctx, hx, prior)
            return kl_diag_gaussian(post, prior)

        report = grad_check_module(comb, loss)
        assert report.passed, report
