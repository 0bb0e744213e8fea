import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hvfvc.cfr import (
    IntraAggregation, LSHParams, ResidualConfidenceCoder, bucket_attention, code_residual_confidence,
    final_reconstruct, initial_reconstruct, lsh_attention, lsh_bucketize, lsh_hash, sample_rotations,
)
from oracles import dense_attention, directional_fd_errors


def test_residual_confidence_shapes_and_range():
    coder = ResidualConfidenceCoder(64, 32, 8)
    f, p = torch.randn(1, 64, 16, 16), torch.randn(1, 64, 16, 16)
    with torch.no_grad():
        r, c, bits = code_residual_confidence(f, p, coder)
    assert r.shape == c.shape == (1, 64, 16, 16)
    assert 0 <= float(c.min()) and float(c.max()) <= 1
    assert float(bits) >= 0
    with pytest.raises(ValueError):
        coder(f, p[:, :, :8])


def test_initial_reconstruct_gates():
    g = torch.Generator().manual_seed(0)
    ft, r = torch.randn(2, 3, 4, 4, generator=g), torch.randn(2, 3, 4, 4, generator=g)
    ones, zeros = torch.ones_like(ft), torch.zeros_like(ft)
    torch.testing.assert_close(initial_reconstruct(ft, ones, r), ft + r, rtol=0, atol=0)
    torch.testing.assert_close(initial_reconstruct(ft, zeros, r), r, rtol=0, atol=0)
    c = torch.rand(2, 3, 4, 4, generator=g)
    oracle = np.asarray(ft) * np.asarray(c) + np.asarray(r)
    np.testing.assert_allclose(initial_reconstruct(ft, c, r).numpy(), oracle, atol=1e-7)
    with pytest.raises(ValueError):
        initial_reconstruct(ft, c[..., :2], r)


def test_final_reconstruct_gates_and_composition():
    g = torch.Generator().manual_seed(1)
    agg = IntraAggregation(4, LSHParams(n_rounds=2, bucket_size=8)).eval()
    f = torch.randn(1, 4, 4, 4, generator=g)
    ones, zeros = torch.ones_like(f), torch.zeros_like(f)
    with torch.no_grad():
        torch.testing.assert_close(final_reconstruct(f, ones, agg), f, rtol=0, atol=0)
        torch.testing.assert_close(final_reconstruct(f, zeros, agg), f + agg(f), rtol=0, atol=0)
        c = torch.rand(1, 4, 4, 4, generator=g)
        separate = f.numpy() + agg(f).numpy() * (1 - c.numpy())
        np.testing.assert_allclose(final_reconstruct(f, c, agg).numpy(), separate, atol=1e-7)


@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100))
def test_hash_is_scale_invariant(seed, scale):
    g = torch.Generator().manual_seed(seed)
    f = torch.randn(20, 8, generator=g, dtype=torch.float64)
    rot = sample_rotations(8, 6, 1, g, torch.float64)[0]
    assert torch.equal(lsh_hash(f, rot), lsh_hash(scale * f, rot))


def test_opposite_axes_hash_apart():
    c, nb = 6, 8
    rot = torch.eye(c)[:, : nb // 2]
    e1 = torch.zeros(1, c)
    e1[0, 0] = 1
    assert int(lsh_hash(e1, rot)) == 0
    assert int(lsh_hash(-e1, rot)) == nb // 2


def test_identical_vectors_chunk_evenly():
    f = torch.ones(50, 4)
    for a in lsh_bucketize(f, LSHParams(n_rounds=2, bucket_size=16), seed=0):
        assert len(torch.unique(a.hashes)) == 1
        assert [len(b) for b in a.buckets] == [16, 16, 16, 2]


@given(n=st.integers(1, 200), k=st.integers(1, 40), seed=st.integers(0, 1000))
def test_bucket_partition_is_exact(n, k, seed):
    f = torch.randn(n, 5, generator=torch.Generator().manual_seed(seed))
    for a in lsh_bucketize(f, LSHParams(n_rounds=2, bucket_size=k), seed=seed):
        members = torch.cat(a.buckets).tolist()
        assert sorted(members) == list(range(n))
        assert max(len(b) for b in a.buckets) <= k


def test_bucketize_deterministic_given_seed():
    f = torch.randn(64, 8)
    a = lsh_bucketize(f, LSHParams(), seed=3)
    b = lsh_bucketize(f, LSHParams(), seed=3)
    assert all(torch.equal(x.permutation, y.permutation) for x, y in zip(a, b))


def test_bucket_attention_cases():
    f = torch.tensor([[1.0, 2.0, 3.0]]).repeat(4, 1)
    g = torch.randn(1, 3).repeat(4, 1)
    torch.testing.assert_close(bucket_attention(f, g), g)
    single = torch.randn(1, 3)
    torch.testing.assert_close(bucket_attention(single, single * 2), single * 2)
    # two vectors with hand-set similarities
    v = torch.tensor([[1.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
    gv = torch.tensor([[10.0], [20.0]], dtype=torch.float64)
    s = np.sqrt(2.0)
    w00, w01 = np.exp(1 / s), np.exp(0.0)
    w10, w11 = np.exp(0.0), np.exp(4 / s)
    expected = [(10 * w00 + 20 * w01) / (w00 + w01), (10 * w10 + 20 * w11) / (w10 + w11)]
    np.testing.assert_allclose(bucket_attention(v, gv).numpy().ravel(), expected, atol=1e-6)


@given(seed=st.integers(0, 10_000))
def test_bucket_attention_is_convex_combination(seed):
    v = torch.randn(7, 4, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    out = bucket_attention(v, v)
    assert torch.all(out <= v.max(0).values + 1e-12)
    assert torch.all(out >= v.min(0).values - 1e-12)


def test_single_bucket_equals_dense_attention():
    g = torch.Generator().manual_seed(4)
    x = torch.randn(1, 16, 5, generator=g, dtype=torch.float64)
    rot = sample_rotations(5, 2, 1, g, torch.float64)
    out = lsh_attention(x, x, LSHParams(n_rounds=1, bucket_size=16), rot)
    np.testing.assert_allclose(out[0].numpy(), dense_attention(x[0].numpy()), atol=1e-5)


def test_intra_aggregate_shape_and_constant_map():
    agg = IntraAggregation(64, LSHParams()).eval()
    with torch.no_grad():
        assert agg(torch.randn(1, 64, 16, 16)).shape == (1, 64, 16, 16)
        const = torch.randn(1, 8, 1, 1).expand(1, 8, 8, 8).contiguous()
        out = IntraAggregation(8, LSHParams(bucket_size=16)).eval()(const)
    spread = out.flatten(2).max(-1).values - out.flatten(2).min(-1).values
    assert float(spread.max()) < 1e-5


def test_eval_rotations_are_frozen_train_rotations_vary():
    agg = IntraAggregation(4, LSHParams(n_rounds=1, bucket_size=4))
    x = torch.randn(1, 4, 4, 4)
    agg.eval()
    with torch.no_grad():
        torch.testing.assert_close(agg(x), agg(x), rtol=0, atol=0)
    agg.train()
    r1 = agg._rotations(16, 4, torch.float32)
    r2 = agg._rotations(16, 4, torch.float32)
    assert not torch.equal(r1, r2)


def test_final_reconstruct_gradient():
    torch.manual_seed(0)
    agg = IntraAggregation(4, LSHParams(n_rounds=2, bucket_size=8)).double().eval()
    g = torch.Generator().manual_seed(2)
    f = torch.randn(1, 4, 4, 4, generator=g, dtype=torch.float64)
    c = torch.rand(1, 4, 4, 4, generator=g, dtype=torch.float64)
    probe = torch.randn(1, 4, 4, 4, generator=g, dtype=torch.float64)
    errs = directional_fd_errors(lambda a, b: (final_reconstruct(a, b, agg) * probe).sum(), [f, c])
    assert max(errs) < 1e-3
