import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hvfvc.motion import MotionCoder, MotionPredictor, align, code_motion, predict_motion
from oracles import directional_fd_errors, gaussian_mass


def _ramp(h=6, w=8, c=2):
    xs = torch.arange(w, dtype=torch.float64).view(1, 1, 1, w)
    ys = torch.arange(h, dtype=torch.float64).view(1, 1, h, 1)
    return (xs + 10 * ys).expand(1, c, h, w).contiguous()


def test_zero_motion_is_identity():
    ref = torch.randn(2, 5, 7, 9)
    torch.testing.assert_close(align(ref, torch.zeros(2, 2, 7, 9)), ref, rtol=0, atol=0)


def test_integer_shift_matches_index_oracle():
    ref = _ramp()
    m = torch.zeros(1, 2, 6, 8, dtype=torch.float64)
    m[:, 0] = 1.0
    out = align(ref, m)
    expected = ref.clone()
    expected[..., :-1] = ref[..., 1:]
    expected[..., -1] = ref[..., -1]  # clamped at the border
    torch.testing.assert_close(out, expected, rtol=0, atol=0)


def test_half_pixel_shift_gives_midpoints():
    ref = _ramp()
    m = torch.zeros(1, 2, 6, 8, dtype=torch.float64)
    m[:, 0] = 0.5
    out = align(ref, m)
    torch.testing.assert_close(out[..., :-1], ref[..., :-1] + 0.5, rtol=0, atol=1e-12)
    m = torch.zeros(1, 2, 6, 8, dtype=torch.float64)
    m[:, 1] = 0.5
    out = align(ref, m)
    torch.testing.assert_close(out[..., :-1, :], ref[..., :-1, :] + 5.0, rtol=0, atol=1e-12)


def test_size_mismatch_raises():
    with pytest.raises(ValueError):
        align(torch.zeros(1, 3, 4, 4), torch.zeros(1, 2, 4, 5))


@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_align_is_linear_in_reference(seed, a, b):
    g = torch.Generator().manual_seed(seed)
    f1, f2 = torch.randn(1, 3, 5, 6, generator=g, dtype=torch.float64), torch.randn(1, 3, 5, 6, generator=g,
                                                                                      dtype=torch.float64)
    m = torch.randn(1, 2, 5, 6, generator=g, dtype=torch.float64) * 2
    lhs = align(a * f1 + b * f2, m)
    rhs = a * align(f1, m) + b * align(f2, m)
    torch.testing.assert_close(lhs, rhs, rtol=0, atol=1e-6)


def test_align_gradient_wrt_motion():
    g = torch.Generator().manual_seed(5)
    ref = torch.randn(1, 3, 6, 6, generator=g, dtype=torch.float64)
    # fractional displacements well away from integer kinks and borders
    m = 0.25 + 0.5 * torch.rand(1, 2, 6, 6, generator=g, dtype=torch.float64)
    probe = torch.randn(1, 3, 6, 6, generator=g, dtype=torch.float64)
    errs = directional_fd_errors(lambda mm, rr: (align(rr, mm) * probe).sum(), [m, ref], eps=1e-4)
    assert max(errs) < 1e-3


def test_untrained_predictor_outputs_zero_field():
    p = MotionPredictor(16, hidden=8)
    out = predict_motion(torch.rand(1, 3, 64, 64), torch.randn(1, 16, 16, 16), p)
    assert out.shape == (1, 2, 16, 16)
    assert torch.count_nonzero(out) == 0
    with pytest.raises(ValueError):
        p(torch.rand(1, 3, 64, 64), torch.randn(1, 16, 8, 8))


def test_motion_coder_eval_deterministic_and_rate_oracle():
    torch.manual_seed(2)
    coder = MotionCoder(hidden=8, latent=4, hyper=2).double().eval()
    m = torch.randn(1, 2, 16, 16, dtype=torch.float64)
    with torch.no_grad():
        r1, b1 = code_motion(m, coder)
        r2, b2 = code_motion(m, coder)
        _, _, (y_hat, z_hat) = coder(m, mode="eval")
        means, scales = coder.entropy.params(z_hat)
        hs = coder.entropy.hyper_scales().expand_as(z_hat)
    torch.testing.assert_close(r1, r2, rtol=0, atol=0)
    assert float(b1) == float(b2) >= 0
    oracle = sum(-np.log2(max(gaussian_mass(v, mu, s), 1e-9)) for v, mu, s in
                 zip(y_hat.flatten().tolist(), means.flatten().tolist(), scales.flatten().tolist()))
    oracle += sum(-np.log2(gaussian_mass(v, 0.0, s)) for v, s in zip(z_hat.flatten().tolist(),
                                                                        hs.flatten().tolist()))
    assert abs(float(b1) - oracle) < 1e-6


def _shifted_pair(seed, shift):
    """Smooth random texture and a copy translated ``shift`` pixels to the left."""
    g = torch.Generator().manual_seed(seed)
    base = torch.nn.functional.interpolate(torch.rand(1, 3, 12, 12, generator=g), size=(96, 96),
                                           mode="bicubic", align_corners=False)[0]
    return base[:, 16:80, 16 + shift:80 + shift][None], base[:, 16:80, 16:80][None]


@pytest.mark.slow
def test_trained_predictor_distinguishes_static_from_shifted():
    """Toy training: warp reference features onto the current frame's features."""
    from hvfvc.backbone import FeatureExtractor

    torch.manual_seed(0)
    ext = FeatureExtractor(8)
    for p in ext.parameters():
        p.requires_grad_(False)
    pred = MotionPredictor(8, hidden=32)
    opt = torch.optim.Adam(pred.parameters(), 1e-3)
    for step in range(1500):
        cur, ref = _shifted_pair(step, (0, 4, 8)[step % 3])
        fr = ext(ref)
        loss = ((align(fr, pred(cur, fr)) - ext(cur)) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    still, moved = [], []
    with torch.no_grad():
        for i in range(5):
            cur, ref = _shifted_pair(10_000 + i, 0)
            still.append(float(pred(cur, ext(ref)).abs().mean()))
            cur, ref = _shifted_pair(10_000 + i, 8)
            moved.append(float(pred(cur, ext(ref)).abs().mean()))
    assert np.mean(still) < np.mean(moved)


@pytest.mark.slow
def test_trained_motion_coder_handles_zero_field():
    torch.manual_seed(0)
    coder = MotionCoder(hidden=16, latent=8, hyper=4)
    opt = torch.optim.Adam(coder.parameters(), 2e-3)
    g = torch.Generator().manual_seed(0)
    for step in range(400):
        m = torch.randn(4, 2, 16, 16, generator=g) * torch.rand(4, 1, 1, 1, generator=g) * 2
        m[0] = 0
        recon, bits, _ = coder(m, mode="train")
        loss = ((recon - m) ** 2).mean() * 100 + 0.01 * bits / m.numel()
        opt.zero_grad()
        loss.backward()
        opt.step()
    coder.eval()
    with torch.no_grad():
        zero = torch.zeros(1, 2, 16, 16)
        r0, b0 = code_motion(zero, coder)
        assert float(r0.abs().mean()) <= 0.1
        probe_bits = [float(code_motion(torch.randn(1, 2, 16, 16, generator=g) * 2, coder)[1]) for _ in range(5)]
    assert float(b0) <= min(probe_bits)
