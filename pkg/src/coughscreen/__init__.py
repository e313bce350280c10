"""Cough audio COVID-19 screening: feature extraction, a small ensemble
network trained from scratch, evaluation statistics, CLI, and service."""

from .audio_io import AudioClip, decode_wav, read_wav, resample
from .dataset import ClinicalFlags, SampleRecord, SplitSpec, derive_flags, split
from .dsp import FeatureVector, FrameParams, extract_features, feature_digest
from .evaluation import auc, ci95, roc_curve, t_test_auc
from .model import ArchConfig, ModelParams, TrainConfig, build, forward, predict, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "decode_wav",
    "read_wav",
    "resample",
    "ClinicalFlags",
    "SampleRecord",
    "SplitSpec",
    "derive_flags",
    "split",
    "FeatureVector",
    "FrameParams",
    "extract_features",
    "feature_digest",
    "auc",
    "ci95",
    "roc_curve",
    "t_test_auc",
    "ArchConfig",
    "ModelParams",
    "TrainConfig",
    "build",
    "forward",
    "predict",
    "train",
    "__version__",
]
