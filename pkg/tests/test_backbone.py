import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hvfvc.backbone import (
    SCALE_LOWER_BOUND, FeatureExtractor, FrameGenerator, GaussianEntropyModel, gaussian_bits,
    quantize, round_half_away,
)
from hvfvc.model import VideoCodec, load_checkpoint, read_checkpoint_header, save_checkpoint
from oracles import directional_fd_errors, gaussian_mass


def test_extractor_and_generator_shapes():
    e, g = FeatureExtractor(64), FrameGenerator(64)
    f = e(torch.rand(1, 3, 64, 64))
    assert f.shape == (1, 64, 16, 16)
    x = g(torch.randn(2, 64, 16, 16) * 5)
    assert x.shape == (2, 3, 64, 64)
    assert x.min() >= 0 and x.max() <= 1
    frame = torch.rand(1, 3, 32, 32)
    torch.testing.assert_close(e(frame), e(frame.clone()), rtol=0, atol=0)


def test_extractor_rejects_bad_size():
    with pytest.raises(ValueError):
        FeatureExtractor(8)(torch.rand(1, 3, 30, 32))


def test_generator_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="feature channels"):
        FrameGenerator(8)(torch.rand(1, 16, 4, 4))


@pytest.mark.parametrize("which", ["extractor", "generator"])
def test_transform_gradients_match_finite_differences(which):
    torch.manual_seed(1)
    if which == "extractor":
        net = FeatureExtractor(8).double()
        x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    else:
        net = FrameGenerator(8).double()
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
    probe = torch.randn_like(net(x))
    errs = directional_fd_errors(lambda inp: (net(inp) * probe).sum(), [x])
    assert max(errs) < 1e-3


def test_quantize_eval_rounding():
    y = torch.tensor([1.4, -2.5, 2.5, 0.5, -0.5, 0.49])
    torch.testing.assert_close(quantize(y, "eval"), torch.tensor([1.0, -3.0, 3.0, 1.0, -1.0, 0.0]))
    torch.testing.assert_close(quantize(y, "eval"), quantize(y, "eval"), rtol=0, atol=0)


def test_quantize_train_noise_statistics():
    torch.manual_seed(0)
    y = torch.randn(100_000) * 3
    d = quantize(y, "train") - y
    assert d.min() >= -0.5 and d.max() <= 0.5
    assert abs(float(d.abs().mean()) - 0.25) < 0.01
    with pytest.raises(ValueError):
        quantize(y, "bogus")


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=50))
def test_round_half_away_is_within_half(values):
    y = torch.tensor(values, dtype=torch.float64)
    q = round_half_away(y)
    assert torch.all(q == torch.round(q))
    assert torch.all((q - y).abs() <= 0.5)


def test_one_bit_and_zero_bit_limits():
    # scale with mass([-.5,.5]) = 0.5: 0.5 / z where Phi(z) = 0.75
    from scipy.stats import norm

    s = 0.5 / norm.ppf(0.75)
    bits = gaussian_bits(torch.zeros(1, dtype=torch.float64), torch.zeros(1, dtype=torch.float64),
                         torch.tensor([s], dtype=torch.float64))
    assert abs(float(bits) - 1.0) < 1e-9
    tiny = gaussian_bits(torch.zeros(1), torch.zeros(1), torch.tensor([SCALE_LOWER_BOUND]))
    assert 0 <= float(tiny) < 1e-5


def test_estimate_rate_matches_elementwise_oracle(rng):
    torch.manual_seed(3)
    em = GaussianEntropyModel(6, 4).double()
    y_hat = torch.from_numpy(rng.integers(-4, 5, (1, 6, 3, 3)).astype(np.float64))
    z_hat = torch.from_numpy(rng.integers(-2, 3, (1, 4, 3, 3)).astype(np.float64))
    with torch.no_grad():
        bits_y, bits_z = em.estimate_rate(y_hat, z_hat)
        means, scales = em.params(z_hat)
        hs = em.hyper_scales().expand_as(z_hat)
    oracle = sum(-math.log2(max(gaussian_mass(v, m, s), 1e-9)) for v, m, s in
                 zip(y_hat.flatten().tolist(), means.flatten().tolist(), scales.flatten().tolist()))
    assert abs(float(bits_y.sum()) - oracle) < 1e-6
    oracle_z = sum(-math.log2(gaussian_mass(v, 0.0, s)) for v, s in
                   zip(z_hat.flatten().tolist(), hs.flatten().tolist()))
    assert abs(float(bits_z.sum()) - oracle_z) < 1e-6
    assert torch.all(bits_y >= 0) and torch.all(bits_z >= 0)
    assert torch.all(scales >= SCALE_LOWER_BOUND)


@given(st.integers(0, 10_000))
def test_rates_nonnegative_and_scales_bounded(seed):
    torch.manual_seed(seed)
    em = GaussianEntropyModel(4, 3)
    y = torch.randn(1, 4, 2, 2) * 10
    y_hat, z_hat, by, bz = em(y, mode="eval")
    _, scales = em.params(z_hat)
    assert torch.all(by >= 0) and torch.all(bz >= 0)
    assert torch.all(scales >= SCALE_LOWER_BOUND)
    assert torch.all((y_hat - y).abs() <= 0.5)


def test_conditional_model_requires_condition():
    em = GaussianEntropyModel(4, 3, kind="conditional", context_in=5, context_channels=2)
    with pytest.raises(ValueError):
        em(torch.randn(1, 4, 2, 2))
    out = em(torch.randn(1, 4, 2, 2), torch.randn(1, 5, 8, 8), mode="eval")
    assert out[2].shape == (1, 4, 2, 2)


def test_checkpoint_roundtrip_bit_exact(tmp_path, tiny_config):
    model = VideoCodec(tiny_config)
    save_checkpoint(tmp_path / "m.npz", model)
    loaded, _, header = load_checkpoint(tmp_path / "m.npz")
    assert header["descriptor"] == model.descriptor()
    assert read_checkpoint_header(tmp_path / "m.npz")["version"] == 1
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        a = model.code_frame(x, "I", mode="eval")
        b = loaded.code_frame(x, "I", mode="eval")
    torch.testing.assert_close(a.recon, b.recon, rtol=0, atol=0)
    torch.testing.assert_close(a.bits, b.bits, rtol=0, atol=0)


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(3))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
