import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hvfvc.data_media import inject_checkerboard
from hvfvc.losses import (
    LossWeights, RandomConvBackbone, block_average, pc_loss, perceptual_loss, ragan_losses, total_loss,
)
from oracles import directional_fd_errors


def _t(a):
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(np.asarray(a, np.float64), -1, 0)))[None]


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.phi) == (1e-2, 1.0, 5e-4, 0.1)
    with pytest.raises(ValueError):
        LossWeights(phi=-1)
    assert w.with_lambda(0.5).lam == 0.5


def test_block_average_matches_brute_force(rng):
    f = rng.random((3, 12, 8))
    out = block_average(torch.from_numpy(f), 4).numpy()
    for c in range(3):
        for u in range(4):
            for v in range(4):
                assert abs(out[c, u, v] - f[c, u::4, v::4].mean()) < 1e-12
    with pytest.raises(ValueError):
        block_average(torch.zeros(3, 10, 8), 4)


def test_block_average_constant_and_checkerboard():
    const = np.full((16, 16, 3), 0.4)
    np.testing.assert_allclose(block_average(_t(const), 4).numpy(), 0.4)
    cb = block_average(_t(inject_checkerboard(const, 4, 0.1)), 4).numpy()[0, 0]
    expected = np.array([[0.5, 0.5, 0.3, 0.3], [0.5, 0.5, 0.3, 0.3], [0.3, 0.3, 0.5, 0.5], [0.3, 0.3, 0.5, 0.5]])
    np.testing.assert_allclose(cb, expected, atol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_block_average_invariant_to_block_permutation(seed):
    g = np.random.default_rng(seed)
    f = g.random((2, 3, 4, 3, 4))  # C, by, P, bx, P
    perm_y, perm_x = g.permutation(3), g.permutation(3)
    a = torch.from_numpy(f.reshape(2, 12, 12))
    b = torch.from_numpy(f[:, perm_y][:, :, :, perm_x].reshape(2, 12, 12))
    torch.testing.assert_close(block_average(a, 4), block_average(b, 4))


@pytest.mark.parametrize("period", [2, 4, 8])
@pytest.mark.parametrize("amp", [0.01, 0.05, 0.2])
def test_pc_loss_of_injected_checkerboard_is_amp_squared(period, amp):
    x = np.full((32, 32, 3), 0.5)
    xh = inject_checkerboard(x, period, amp)
    assert abs(float(pc_loss(_t(x), _t(xh), period)) - amp**2) < 1e-9


@given(seed=st.integers(0, 10_000))
def test_pc_loss_ignores_per_offset_zero_mean_noise(seed):
    g = np.random.default_rng(seed)
    x = g.random((1, 3, 16, 16))
    noise = g.standard_normal((1, 3, 4, 4, 4, 4))  # by, P, bx, P
    noise -= noise.mean(axis=(2, 4), keepdims=True)
    xh = x + 0.1 * noise.reshape(1, 3, 16, 16)
    assert float(pc_loss(torch.from_numpy(x), torch.from_numpy(xh), 4)) < 1e-6


@given(seed=st.integers(0, 10_000))
def test_pc_loss_properties(seed):
    g = np.random.default_rng(seed)
    x, xh, content = (torch.from_numpy(g.random((1, 3, 8, 8))) for _ in range(3))
    assert float(pc_loss(x, xh, 4)) >= 0
    assert float(pc_loss(x, x, 4)) == 0
    assert abs(float(pc_loss(x + content, xh + content, 4)) - float(pc_loss(x, xh, 4))) < 1e-12


def test_ragan_parity_and_limits():
    for c in (-3.0, 0.0, 2.5):
        d, _ = ragan_losses(torch.full((10,), c, dtype=torch.float64), torch.full((7,), c, dtype=torch.float64))
        assert abs(float(d) - 2 * math.log(2)) < 1e-9
    d, _ = ragan_losses(torch.full((4,), 50.0), torch.full((4,), -50.0))
    assert float(d) < 1e-20
    with pytest.raises(ValueError):
        ragan_losses(torch.zeros(0), torch.zeros(3))


def test_ragan_discriminator_loss_decreases_as_real_scores_rise():
    fake = torch.randn(16, dtype=torch.float64)
    real = torch.randn(16, dtype=torch.float64)
    values = [float(ragan_losses(real + s, fake)[0]) for s in np.linspace(-3, 3, 13)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ragan_generator_gradient():
    g = torch.Generator().manual_seed(0)
    real = torch.randn(12, generator=g, dtype=torch.float64)
    fake = torch.randn(12, generator=g, dtype=torch.float64)
    errs = directional_fd_errors(lambda f: ragan_losses(real, f)[1], [fake], eps=1e-5)
    assert max(errs) < 1e-4


def test_perceptual_loss_basic_properties(rng):
    bb = RandomConvBackbone().double()
    x = torch.from_numpy(rng.random((1, 3, 32, 32)))
    y = torch.from_numpy(rng.random((1, 3, 32, 32)))
    assert float(perceptual_loss(x, x, bb)) == 0
    assert abs(float(perceptual_loss(x, y, bb)) - float(perceptual_loss(y, x, bb))) < 1e-12
    assert float(perceptual_loss(x, 1 - x, bb)) > 0
    with pytest.raises(RuntimeError):
        perceptual_loss(x, y, None)


def test_total_loss_pure_l1():
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64) * 0.8
    total, rep = total_loss(torch.tensor(100.0), x, x + 0.1, LossWeights(lam=0, alpha=1, beta=0, gamma=0, phi=0))
    assert abs(float(total) - 0.1) < 1e-12
    assert rep.perceptual == rep.pc == rep.gan_g == 0


def test_total_loss_linear_in_lambda(rng):
    x = torch.from_numpy(rng.random((1, 3, 8, 8)))
    xh = torch.from_numpy(rng.random((1, 3, 8, 8)))
    w = LossWeights(lam=0.3, alpha=1, beta=0, gamma=0, phi=0)
    t1, r1 = total_loss(torch.tensor(500.0), x, xh, w)
    t2, r2 = total_loss(torch.tensor(500.0), x, xh, w.with_lambda(0.6))
    assert abs((float(t2) - float(t1)) - 0.3 * r1.rate_bits_per_pixel) < 1e-12


def test_total_loss_recomposes_from_report(rng):
    bb = RandomConvBackbone().double()
    x = torch.from_numpy(rng.random((2, 3, 16, 16)))
    xh = torch.from_numpy(rng.random((2, 3, 16, 16)))
    real, fake = torch.from_numpy(rng.standard_normal(20)), torch.from_numpy(rng.standard_normal(20))
    w = LossWeights()
    total, rep = total_loss(torch.tensor(3000.0, dtype=torch.float64), x, xh, w, 4, bb, real, fake)
    assert abs(float(total) - rep.recompose(w)) < 1e-6
    oracle = (w.lam * 3000.0 / (2 * 16 * 16) + w.alpha * float((x - xh).abs().mean())
              + w.beta * rep.perceptual + w.gamma * rep.gan_g + w.phi * rep.pc)
    assert abs(float(total) - oracle) < 1e-6
    # the discriminator loss is reported but never part of the total
    assert rep.gan_d > 0


def test_stage1_report_has_no_perceptual_terms(rng):
    x = torch.from_numpy(rng.random((1, 3, 8, 8)))
    _, rep = total_loss(torch.tensor(10.0), x, x * 0.9, LossWeights.stage1(0.05))
    assert rep.l1 == rep.perceptual == rep.gan_g == rep.pc == 0
    assert rep.mse > 0


@pytest.mark.parametrize("term", ["l1", "perceptual", "pc", "total"])
def test_loss_gradients_match_finite_differences(term, rng):
    bb = RandomConvBackbone().double()
    x = torch.from_numpy(rng.random((1, 3, 16, 16)))
    xh = torch.from_numpy(rng.random((1, 3, 16, 16)) * 0.8 + 0.1)
    fns = {
        "l1": lambda a: (a - x).abs().mean(),
        "perceptual": lambda a: perceptual_loss(x, a, bb),
        "pc": lambda a: pc_loss(x, a, 4),
        "total": lambda a: total_loss(torch.tensor(100.0, dtype=torch.float64), x, a,
                                      LossWeights(gamma=0), 4, bb)[0],
    }
    # small step: |.| and ReLU kinks otherwise fall inside some probes
    assert max(directional_fd_errors(fns[term], [xh], eps=1e-5)) < 1e-3
