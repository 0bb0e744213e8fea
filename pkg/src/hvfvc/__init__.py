"""Learned video codec with confidence-based feature reconstruction."""

from .backbone import ModelConfig
from .bitstream import BitstreamContainer, ContainerError
from .codec_io import decode_sequence, encode_sequence
from .data_media import VideoSequence, checkerboard_score, inject_checkerboard, load_sequence
from .losses import LossWeights
from .metrics import RDCurve, bd_rate, compute_metrics
from .model import VideoCodec, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BitstreamContainer", "ContainerError", "LossWeights", "ModelConfig", "RDCurve", "VideoCodec",
    "VideoSequence", "bd_rate", "checkerboard_score", "compute_metrics", "decode_sequence",
    "encode_sequence", "inject_checkerboard", "load_checkpoint", "load_sequence", "save_checkpoint",
]
