"""Labeling, staged model training and the held-out evaluation run.

Stage order follows the two-model design: the pass-1 model is trained first,
then run (predict, encode, measure) over a disjoint pool to produce the
feedback pair that the pass-2 model is trained on.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .controller import (
    AccuracyReport,
    BaselineResult,
    Encoder,
    PipelineConfig,
    QualityMeter,
    QualityTarget,
    RunReport,
    SegmentJob,
    accuracy_report,
    assemble_features,
    feedback_schema,
    fixed_rf_baseline,
    report_from_run,
    run_pipeline,
    segment_features,
)
from .features import DEFAULT_FULL_SCHEMA, FeatureCache, FullSchema
from .labeler import LabelRecord, search_rf
from .model import RF_MAX, RF_MIN, LabeledExample, ModelParams, TrainConfig, forward, train
from .oracle import generate_corpus

log = logging.getLogger(__name__)


def split_sizes(n: int, fractions: Sequence[float] = (0.6, 0.3)) -> tuple[int, int, int]:
    """Sizes of (pass-1 pool, pass-2 pool, held-out) for an n-segment corpus."""
    f1, f2 = fractions
    if f1 <= 0 or f2 <= 0 or f1 + f2 > 1:
        raise ValueError("split fractions must be positive and sum to at most 1")
    n1 = int(round(n * f1))
    n2 = int(round(n * f2))
    return n1, n2, n - n1 - n2


def label_jobs(
    jobs: Sequence[SegmentJob],
    encoder: Encoder,
    quality_meter: QualityMeter,
    target: float = 91.0,
    tol: float = 0.1,
    max_iters: int = 12,
) -> list[LabelRecord]:
    out = []
    for job in jobs:
        res = search_rf(lambda rf, j=job: quality_meter.measure(j, encoder.encode(j, rf, 0)),
                        target, tol, max_iters)
        out.append(LabelRecord(job.source_id, res.rf_label, res.achieved, res.evaluations, res.converged))
    return out


def features_matrix(
    jobs: Sequence[SegmentJob], schema: FullSchema = DEFAULT_FULL_SCHEMA, cache: FeatureCache | None = None
) -> np.ndarray:
    return np.stack([segment_features(j, schema, cache).values for j in jobs])


def train_pass1(X: np.ndarray, labels: Sequence[float], cfg: TrainConfig, schema_version: str) -> ModelParams:
    data = [LabeledExample(x, float(y)) for x, y in zip(X, labels)]
    return train(data, cfg, schema_version)


def first_pass_feedback(
    model1: ModelParams,
    jobs: Sequence[SegmentJob],
    X: np.ndarray,
    encoder: Encoder,
    quality_meter: QualityMeter,
) -> np.ndarray:
    """(rf1, v1) for each job: predict with the pass-1 model, encode, measure."""
    out = np.empty((len(jobs), 2))
    for i, (job, x) in enumerate(zip(jobs, X)):
        rf1 = float(forward(model1, x, "infer"))
        out[i] = rf1, quality_meter.measure(job, encoder.encode(job, rf1, 1))
    return out


def feedback_probes(
    jobs: Sequence[SegmentJob],
    feedback: np.ndarray,
    encoder: Encoder,
    quality_meter: QualityMeter,
    count: int,
    sigma: float,
    seed: int = 0,
) -> list[np.ndarray]:
    """Extra (rf, v) feedback pairs per job, encoded at rf1 + N(0, sigma).

    The pass-2 model has to learn how the RF correction depends on the
    measured quality; extra real encodes around rf1 sample that response
    more densely than the single pass-1 point per segment.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        rfs = np.clip(feedback[:, 0] + rng.normal(0.0, sigma, len(jobs)), RF_MIN, RF_MAX)
        pairs = np.empty((len(jobs), 2))
        for i, (job, rf) in enumerate(zip(jobs, rfs)):
            pairs[i] = rf, quality_meter.measure(job, encoder.encode(job, float(rf), 1))
        out.append(pairs)
    return out


def train_pass2(
    X: np.ndarray,
    feedback: np.ndarray | list[np.ndarray],
    labels: Sequence[float],
    cfg: TrainConfig,
    schema_version: str,
) -> ModelParams:
    """Train on base ++ (rf1, v1); the model output is a correction added to rf1.

    `feedback` may hold several (rf, v) sets stacked as a list; each one is
    paired with the same base features and labels.
    """
    sets = feedback if isinstance(feedback, list) else [feedback]
    X2 = np.vstack([np.hstack([X, fb]) for fb in sets])
    y2 = np.concatenate([np.asarray(labels, dtype=np.float64)] * len(sets))
    data = [LabeledExample(x, float(y)) for x, y in zip(X2, y2)]
    return train(data, replace(cfg, skip_input=X.shape[1]), feedback_schema(schema_version))


def pass_configs(seed: int, train1: TrainConfig, train2: TrainConfig) -> tuple[TrainConfig, TrainConfig]:
    """Training configs with seeds derived from the one run seed."""
    return replace(train1, seed=seed + 1), replace(train2, seed=seed + 2)


@dataclass
class ExperimentConfig:
    segments: int = 2000
    split: tuple[float, float] = (0.6, 0.3)
    noise_sigma: float = 0.3
    seed: int = 7
    target: float = 91.0
    label_tol: float = 0.1
    label_max_iters: int = 12
    bands: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    # feature cache file reused across runs; None keeps the cache in memory
    cache_path: str | None = None
    # extra pass-2 training encodes per segment around rf1, and their RF spread
    feedback_probes: int = 7
    probe_sigma: float = 1.0
    # training seeds are derived from `seed` (seed + 1, seed + 2); their own seed field is ignored
    train1: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-4, epochs=100))
    train2: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=1e-3, epochs=25, hidden=32, blocks=2, weight_decay=1.0
        )
    )


@dataclass
class ExperimentResult:
    report: AccuracyReport
    baseline: BaselineResult
    baseline_report: AccuracyReport
    run: RunReport
    model1: ModelParams
    model2: ModelParams
    timings: dict[str, float]


def run_synthetic_experiment(cfg: ExperimentConfig, codec) -> ExperimentResult:
    """Synthetic corpus -> labels -> pass-1/pass-2 models -> held-out evaluation."""
    from .controller import jobs_from_corpus

    timings = {}
    t0 = time.perf_counter()
    records = generate_corpus(cfg.segments, cfg.seed, cfg.noise_sigma)
    jobs = jobs_from_corpus(records)
    n1, n2, _ = split_sizes(len(jobs), cfg.split)
    pool1, pool2, held = jobs[:n1], jobs[n1 : n1 + n2], jobs[n1 + n2 :]
    schema = DEFAULT_FULL_SCHEMA
    cache = FeatureCache(cfg.cache_path)
    X1 = features_matrix(pool1, schema, cache)
    X2 = features_matrix(pool2, schema, cache)
    features_matrix(held, schema, cache)
    if cfg.cache_path and cache.misses:
        cache.save()
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    labels1 = label_jobs(pool1, codec, codec, cfg.target, cfg.label_tol, cfg.label_max_iters)
    labels2 = label_jobs(pool2, codec, codec, cfg.target, cfg.label_tol, cfg.label_max_iters)
    timings["labels"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train1, train2 = pass_configs(cfg.seed, cfg.train1, cfg.train2)
    model1 = train_pass1(X1, [r.rf_label for r in labels1], train1, schema.version)
    fb = first_pass_feedback(model1, pool2, X2, codec, codec)
    extra = feedback_probes(pool2, fb, codec, codec, cfg.feedback_probes, cfg.probe_sigma, cfg.seed)
    model2 = train_pass2(X2, [fb, *extra], [r.rf_label for r in labels2], train2, schema.version)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    qt = QualityTarget(cfg.target)
    run = run_pipeline(
        held,
        PipelineConfig(model1, model2, codec, codec, qt, schema, cache, measure_second_pass=True),
    )
    report = report_from_run(run, cfg.target, cfg.bands)
    baseline = fixed_rf_baseline(held, codec, codec, cfg.target)
    base_report = accuracy_report([(q, 1) for q in baseline.qualities], cfg.target, cfg.bands)
    timings["evaluate"] = time.perf_counter() - t0
    return ExperimentResult(report, baseline, base_report, run, model1, model2, timings)
