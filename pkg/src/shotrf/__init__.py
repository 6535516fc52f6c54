"""Per-shot rate-factor prediction for constant-quality encoding.

Texture (GLCM/NCC) and pre-coding features feed a regression network that
predicts the encoder RF hitting a VMAF target; a second network refines the
RF from first-pass feedback when the first encode misses the window.
"""

__version__ = "0.1.0"

from .controller import (
    PipelineConfig,
    QualityTarget,
    SegmentJob,
    SyntheticCodec,
    encode_segment_two_pass,
    run_pipeline,
)
from .features import DEFAULT_FULL_SCHEMA, FeatureCache, extract_features
from .frameio import FrameSequence, Plane, read_y4m, write_y4m
from .labeler import search_rf
from .model import ModelParams, TrainConfig, forward, load_model, save_model, train
from .oracle import SyntheticCurveParams, curve_from_features, synth_label, synth_quality
from .segmenter import Segment, detect_shots

__all__ = [
    "DEFAULT_FULL_SCHEMA",
    "FeatureCache",
    "FrameSequence",
    "ModelParams",
    "PipelineConfig",
    "Plane",
    "QualityTarget",
    "Segment",
    "SegmentJob",
    "SyntheticCodec",
    "SyntheticCurveParams",
    "TrainConfig",
    "curve_from_features",
    "detect_shots",
    "encode_segment_two_pass",
    "extract_features",
    "forward",
    "load_model",
    "read_y4m",
    "run_pipeline",
    "save_model",
    "search_rf",
    "synth_label",
    "synth_quality",
    "train",
    "write_y4m",
]
