import numpy as np
import torch

from hvfvc.cfr import LSHParams
from hvfvc.experiments import (
    CFRAblationConfig, PCAblationConfig, brute_force_knn, cfr_ablation, lsh_candidates, lsh_recall,
    occlusion_set, pc_loss_ablation,
)
from oracles import exact_knn


def test_brute_force_knn_matches_oracle(rng):
    v = rng.standard_normal((40, 8))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    got = [set(row.tolist()) for row in brute_force_knn(v, 5)]
    assert got == exact_knn(v, 5)


def test_single_chunk_sees_everything(rng):
    v = torch.from_numpy(rng.standard_normal((30, 8))).float()
    cands = lsh_candidates(v, LSHParams(n_rounds=1, bucket_size=64), seed=0)
    assert all(c == set(range(30)) - {i} for i, c in enumerate(cands))


def test_recall_grows_with_rounds():
    small = dict(n=512, dim=16, k=8, bucket_size=32)
    r = [np.mean([lsh_recall(rounds=k, seed=s, **small) for s in range(3)]) for k in (1, 2, 4)]
    assert r[0] <= r[1] <= r[2]
    assert r[0] > 32 / 512  # better than random chunking


def test_occlusion_sets_are_disjoint_and_reproducible():
    a = occlusion_set(2, 3, 32, 8, seed0=0)
    b = occlusion_set(2, 3, 32, 8, seed0=0)
    c = occlusion_set(2, 3, 32, 8, seed0=1000)
    np.testing.assert_array_equal(a[1][0].frames, b[1][0].frames)
    assert not np.array_equal(a[0][0].frames, c[0][0].frames)
    assert a[0][1][1].any()


def test_pc_ablation_smoke(rng):
    img = rng.random((32, 32, 3)).astype(np.float32)
    rep = pc_loss_ablation(img, PCAblationConfig(steps=3, channels=8))
    assert set(rep["runs"]) == {"0.0", "0.1"} and rep["score_ratio"] > 0


def test_cfr_ablation_smoke():
    small = dict(feature_channels=8, latent_channels=8, hyper_channels=8, motion_channels=8,
                 motion_latent_channels=8, context_channels=8, lsh_bucket_size=16, disc_channels=8)
    cfg = CFRAblationConfig(steps=2, batch_size=1, frame_size=32, train_sequences=2, train_frames=3,
                            val_sequences=2, val_frames=3, model=small)
    rep = cfr_ablation(cfg)
    assert len(rep["sequences"]) == 2 and set(rep["models"]) == {"cfr", "baseline"}
    assert rep["sequences"][0]["cfr"]["confidence_inside"] is not None
    assert rep["sequences"][0]["baseline"]["confidence_inside"] is None
