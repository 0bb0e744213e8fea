"""Scaled-down ablation runners: PC loss, CFR path, LSH recall."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .backbone import FeatureExtractor, FrameGenerator, ModelConfig
from .cfr import LSHParams, lsh_bucketize
from .data_media import SynthSpec, checkerboard_score, synth_occlusion_sequence
from .losses import LossWeights, RandomConvBackbone, total_loss
from .metrics import masked_l1, psnr
from .model import VideoCodec
from .training import TrainConfig, estimate_sequence, run_stage

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- PC loss


@dataclass(frozen=True)
class PCAblationConfig:
    steps: int = 2000
    phis: tuple = (0.0, 0.1)
    period: int = 4  # the generator's two stride-2 deconvs
    channels: int = 32
    lr: float = 1e-3
    alpha: float = 1e-2
    beta: float = 1.0
    seed: int = 0


def default_test_image(size: int = 128) -> np.ndarray:
    """A natural-image crop; falls back to the synthetic texture without scikit-image."""
    try:
        from skimage.data import astronaut
        from skimage.transform import resize
    except ImportError:
        seq, _ = synth_occlusion_sequence(SynthSpec(size=size, num_frames=2, occluder_velocity=0, texture_seed=0,
                                                    occluder_width=0))
        return seq.frames[0]
    img = astronaut()[30:286, 130:386]
    return resize(img, (size, size), anti_aliasing=True).astype(np.float32)


def overfit_autoencoder(image: np.ndarray, phi: float, cfg: PCAblationConfig = PCAblationConfig()):
    """Fit extractor -> transposed-conv generator to one image; returns the reconstruction."""
    torch.manual_seed(cfg.seed)
    extractor, generator = FeatureExtractor(cfg.channels), FrameGenerator(cfg.channels)
    backbone = RandomConvBackbone()
    weights = LossWeights(lam=0.0, alpha=cfg.alpha, beta=cfg.beta, gamma=0.0, phi=phi)
    params = list(extractor.parameters()) + list(generator.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None].float()
    zero = torch.zeros(())
    for _ in range(cfg.steps):
        recon = generator(extractor(x))
        loss, _ = total_loss(zero, x, recon, weights, cfg.period, backbone)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        recon = generator(extractor(x))
    return recon[0].permute(1, 2, 0).numpy()


def pc_loss_ablation(image: np.ndarray | None = None, cfg: PCAblationConfig = PCAblationConfig()) -> dict:
    if image is None:
        image = default_test_image()
    runs = {}
    for phi in cfg.phis:
        t0 = time.perf_counter()
        recon = overfit_autoencoder(image, phi, cfg)
        runs[str(phi)] = {
            "phi": phi,
            "checkerboard_score": checkerboard_score(recon, cfg.period),
            "psnr": psnr(image, recon),
            "seconds": time.perf_counter() - t0,
        }
    base, pc = runs[str(cfg.phis[0])], runs[str(cfg.phis[-1])]
    ratio = pc["checkerboard_score"] / base["checkerboard_score"]
    return {
        "config": asdict(cfg),
        "image_score": checkerboard_score(image, cfg.period),
        "runs": runs,
        "score_ratio": ratio,
        "psnr_gap": abs(pc["psnr"] - base["psnr"]),
        "passed": bool(ratio <= 0.5 and abs(pc["psnr"] - base["psnr"]) <= 1.0),
    }


# ------------------------------------------------------------------- CFR


TOY_MODEL = dict(feature_channels=32, latent_channels=48, hyper_channels=16, motion_channels=32,
                 motion_latent_channels=16, context_channels=16, lsh_bucket_size=64, disc_channels=16)


@dataclass(frozen=True)
class CFRAblationConfig:
    steps: int = 5000
    lam: float = 0.01
    batch_size: int = 4
    unroll: int = 3
    train_gop: int = 3
    frame_size: int = 64
    velocity: int = 8
    train_sequences: int = 16
    train_frames: int = 8
    val_sequences: int = 10
    val_frames: int = 6
    val_gop: int = 50
    lr: float = 1e-3
    seed: int = 0
    model: dict = field(default_factory=lambda: dict(TOY_MODEL))


def occlusion_set(count: int, frames: int, size: int, velocity: int, seed0: int):
    """Occluder covering the left half at t=0 and sliding right."""
    out = []
    for i in range(count):
        spec = SynthSpec(size=size, num_frames=frames, occluder_velocity=velocity, texture_seed=seed0 + i)
        out.append(synth_occlusion_sequence(spec))
    return out


def evaluate_occlusion(model: VideoCodec, sequences, gop: int) -> list[dict]:
    """Per sequence: estimated bpp, masked L1 and confidence inside/outside the masks (P frames only)."""
    rows = []
    for seq, masks in sequences:
        bpp, recons, results = estimate_sequence(model, seq, gop)
        l1s, conf_in, conf_out = [], [], []
        for t, res in enumerate(results):
            if res.kind != "P" or not masks[t].any():
                continue
            frame = recons[t][0].permute(1, 2, 0).numpy()
            l1s.append(masked_l1(seq.frames[t], frame, masks[t]))
            if res.confidence is not None:
                conf = _confidence_map(res.confidence, seq.height, seq.width)
                conf_in.append(float(conf[masks[t]].mean()))
                conf_out.append(float(conf[~masks[t]].mean()))
        rows.append({
            "bpp": bpp,
            "masked_l1": float(np.mean(l1s)) if l1s else None,
            "confidence_inside": float(np.mean(conf_in)) if conf_in else None,
            "confidence_outside": float(np.mean(conf_out)) if conf_out else None,
        })
    return rows


def _confidence_map(conf: torch.Tensor, height: int, width: int) -> np.ndarray:
    """Channel-mean confidence upsampled from feature to pixel resolution."""
    c = conf[0].mean(0, keepdim=True)[None]
    c = torch.nn.functional.interpolate(c, size=(height, width), mode="nearest")
    return c[0, 0].numpy()


def train_toy_codec(cfg: CFRAblationConfig, use_cfr: bool, train_data, progress=None) -> VideoCodec:
    model_cfg = ModelConfig(**{**cfg.model, "use_cfr": use_cfr})
    tc = TrainConfig(stage=1, epochs=1, steps_per_epoch=cfg.steps, lr=cfg.lr, batch_size=cfg.batch_size,
                     crop_size=cfg.frame_size, unroll=cfg.unroll, train_gop=cfg.train_gop, seed=cfg.seed,
                     lam=cfg.lam)
    torch.manual_seed(cfg.seed)
    model = VideoCodec(model_cfg)
    model, _ = run_stage(tc, model=model, data=train_data, progress=progress)
    return model


def cfr_ablation(cfg: CFRAblationConfig = CFRAblationConfig(), progress=None) -> dict:
    train = occlusion_set(cfg.train_sequences, cfg.train_frames, cfg.frame_size, cfg.velocity, seed0=1000)
    val = occlusion_set(cfg.val_sequences, cfg.val_frames, cfg.frame_size, cfg.velocity, seed0=0)
    train_seqs = [s for s, _ in train]
    models, evals, seconds = {}, {}, {}
    for name, flag in (("cfr", True), ("baseline", False)):
        t0 = time.perf_counter()
        models[name] = train_toy_codec(cfg, flag, train_seqs, progress)
        seconds[name] = time.perf_counter() - t0
        evals[name] = evaluate_occlusion(models[name], val, cfg.val_gop)
    per_seq = []
    for i, (a, b) in enumerate(zip(evals["cfr"], evals["baseline"])):
        bpp_ratio = a["bpp"] / b["bpp"]
        lower = a["masked_l1"] is not None and b["masked_l1"] is not None and a["masked_l1"] < b["masked_l1"]
        matched = abs(bpp_ratio - 1.0) <= 0.05
        gap = None
        if a["confidence_inside"] is not None:
            gap = a["confidence_outside"] - a["confidence_inside"]
        per_seq.append({"sequence": i, "cfr": a, "baseline": b, "bpp_ratio": bpp_ratio,
                        "lower_l1": lower, "bpp_matched": matched, "wins": bool(lower and matched),
                        "confidence_gap": gap})
    wins = sum(r["wins"] for r in per_seq)
    localized = sum(r["confidence_gap"] is not None and r["confidence_gap"] >= 0.05 for r in per_seq)
    return {
        "config": asdict(cfg),
        "train_seconds": seconds,
        "sequences": per_seq,
        "wins": wins,
        "cfr_passed": wins >= 8,
        "confidence_localized": localized,
        "confidence_passed": localized > len(per_seq) / 2,
        "models": models,
    }


# ------------------------------------------------------------ LSH recall


def brute_force_knn(vectors: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` most cosine-similar other vectors (rows unit-normalised)."""
    sim = vectors @ vectors.T
    np.fill_diagonal(sim, -np.inf)
    return np.argpartition(-sim, k, axis=1)[:, :k]


def lsh_candidates(features: torch.Tensor, lsh: LSHParams, seed: int) -> list[set]:
    """Union over rounds of each vector's chunk mates."""
    n = features.shape[0]
    cands = [set() for _ in range(n)]
    for assignment in lsh_bucketize(features, lsh, seed):
        for chunk in assignment.buckets:
            members = chunk.tolist()
            group = set(members)
            for i in members:
                cands[i] |= group
    for i in range(n):
        cands[i].discard(i)
    return cands


def lsh_recall(n: int = 4096, dim: int = 64, k: int = 16, rounds: int = 4, bucket_size: int = 64,
               seed: int = 0) -> float:
    """Recall@k of LSH chunk co-membership against exact cosine kNN on random unit vectors."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    truth = brute_force_knn(v, k)
    cands = lsh_candidates(torch.from_numpy(v).float(), LSHParams(n_rounds=rounds, bucket_size=bucket_size), seed)
    hits = sum(len(cands[i].intersection(truth[i].tolist())) for i in range(n))
    return hits / (n * k)


def lsh_recall_sweep(rounds=(1, 2, 4, 8), seeds=range(10), bucket_size: int = 64, **kw) -> dict:
    table = {r: [lsh_recall(rounds=r, seed=s, bucket_size=bucket_size, **kw) for s in seeds] for r in rounds}
    means = {r: float(np.mean(v)) for r, v in table.items()}
    ordered = [means[r] for r in rounds]
    return {
        "bucket_size": bucket_size,
        "mean_recall": means,
        "per_seed": table,
        "monotone": all(a <= b for a, b in zip(ordered, ordered[1:])),
    }
