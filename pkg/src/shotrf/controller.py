"""Per-segment two-pass RF control loop and run-level reporting."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .features import DEFAULT_FULL_SCHEMA, FeatureCache, FullSchema, extract_features
from .frameio import FrameSequence
from .labeler import search_rf
from .model import ModelParams, forward
from .oracle import CorpusRecord, SyntheticCurveParams, curve_from_features, estimate_descriptor, synth_quality
from .segmenter import Segment, content_id, detect_shots
from .texture import FeatureVector

log = logging.getLogger(__name__)

DEFAULT_BANDS = (1.0, 2.0, 3.0, 4.0)
FEEDBACK_SUFFIX = "+fb(rf1,vmaf1)"


@dataclass(frozen=True)
class QualityTarget:
    target: float = 91.0
    window_low: float | None = None
    window_high: float | None = None

    def __post_init__(self):
        if self.window_low is None:
            object.__setattr__(self, "window_low", self.target - 1.0)
        if self.window_high is None:
            object.__setattr__(self, "window_high", self.target + 1.0)
        if not self.window_low < self.target < self.window_high:
            raise ValueError("need window_low < target < window_high")

    def accepts(self, vmaf: float) -> bool:
        return self.window_low <= vmaf <= self.window_high


@dataclass
class SegmentJob:
    """One segment to encode.  Frames may be produced lazily (synthetic corpus)."""

    index: int
    segment: Segment
    seed: int = 0
    curve: SyntheticCurveParams | None = None
    _frames: FrameSequence | None = None
    _render: Callable[[], FrameSequence] | None = None

    @property
    def frames(self) -> FrameSequence:
        if self._frames is None:
            if self._render is None:
                raise ValueError(f"segment {self.index} has no frames")
            self._frames = self._render()
        return self._frames

    @property
    def source_id(self) -> str:
        return self.segment.source_id


def jobs_from_video(
    frames: FrameSequence, threshold: float, min_shot_len: int, seed: int = 0
) -> list[SegmentJob]:
    return [
        SegmentJob(i, seg, seed + i, _frames=frames[seg.start_frame : seg.end_frame])
        for i, seg in enumerate(detect_shots(frames, threshold, min_shot_len))
    ]


def jobs_from_corpus(records: Sequence[CorpusRecord], **render_kwargs) -> list[SegmentJob]:
    jobs = []
    for r in records:
        frames = r.render(**render_kwargs)
        seg = Segment(0, len(frames), content_id(frames))
        jobs.append(SegmentJob(r.index, seg, r.seed, r.curve, _frames=frames))
    return jobs


# --- adapters ------------------------------------------------------------------


class Encoder(Protocol):
    def encode(self, job: SegmentJob, rf: float, pass_index: int) -> Any: ...


class QualityMeter(Protocol):
    def measure(self, job: SegmentJob, stream: Any) -> float: ...


@dataclass(frozen=True)
class SyntheticStream:
    source_id: str
    rf: float


class SyntheticCodec:
    """Encoder and quality meter backed by the logistic oracle.

    Jobs without a curve (real footage) get one from their estimated
    complexity descriptor.
    """

    def __init__(self, noise_sigma: float | None = None):
        self.noise_sigma = noise_sigma
        self.encodes = 0
        self.measures = 0

    def curve_for(self, job: SegmentJob) -> SyntheticCurveParams:
        curve = job.curve
        if curve is None:
            curve = curve_from_features(estimate_descriptor(job.frames))
        if self.noise_sigma is not None and curve.noise_sigma != self.noise_sigma:
            curve = SyntheticCurveParams(curve.midpoint, curve.slope, curve.ceiling, self.noise_sigma)
        return curve

    def encode(self, job: SegmentJob, rf: float, pass_index: int = 1) -> SyntheticStream:
        self.encodes += 1
        return SyntheticStream(job.source_id, float(rf))

    def measure(self, job: SegmentJob, stream: SyntheticStream) -> float:
        self.measures += 1
        return synth_quality(self.curve_for(job), stream.rf, job.seed)

    def encode_and_measure(self, job: SegmentJob) -> Callable[[float], float]:
        return lambda rf: self.measure(job, self.encode(job, rf, 0))


# --- two-pass loop -------------------------------------------------------------


@dataclass
class PassResult:
    pass_index: int
    rf: float
    measured_quality: float | None
    stream_ref: Any


@dataclass
class SegmentResult:
    index: int
    segment: Segment
    passes: list[PassResult]

    @property
    def total_passes(self) -> int:
        return len(self.passes)

    @property
    def accepted_stream(self) -> Any:
        return self.passes[-1].stream_ref

    def record(self) -> dict:
        p1 = self.passes[0]
        p2 = self.passes[1] if len(self.passes) > 1 else None
        return {
            "index": self.index,
            "source_id": self.segment.source_id,
            "start_frame": self.segment.start_frame,
            "end_frame": self.segment.end_frame,
            "rf1": p1.rf,
            "v1": p1.measured_quality,
            "rf2": p2.rf if p2 else None,
            "v2": p2.measured_quality if p2 else None,
            "passes": self.total_passes,
        }


class SegmentError(RuntimeError):
    def __init__(self, index: int, pass_index: int, cause: BaseException):
        super().__init__(f"segment {index}, pass {pass_index}: {cause}")
        self.index = index
        self.pass_index = pass_index
        self.cause = cause


def feedback_schema(version: str) -> str:
    return version + FEEDBACK_SUFFIX


def assemble_features(
    base: FeatureVector, feedback: tuple[float, float] | None = None
) -> FeatureVector:
    """base, or base ++ [rf1, vmaf1] when first-pass feedback is given."""
    if feedback is None:
        return base
    rf1, v1 = feedback
    return FeatureVector(
        feedback_schema(base.schema_version), np.concatenate([base.values, [rf1, v1]])
    )


def encode_segment_two_pass(
    job: SegmentJob,
    features: FeatureVector,
    model1: ModelParams,
    model2: ModelParams,
    encoder: Encoder,
    quality_meter: QualityMeter,
    qt: QualityTarget = QualityTarget(),
    measure_second_pass: bool = False,
) -> SegmentResult:
    if model1.input_dim != len(features) or model2.input_dim != len(features) + 2:
        raise ValueError(
            f"models expect {model1.input_dim}/{model2.input_dim} inputs for a "
            f"{len(features)}-feature segment"
        )
    pass_index = 1
    try:
        rf1 = float(forward(model1, features.values, "infer"))
        s1 = encoder.encode(job, rf1, 1)
        v1 = float(quality_meter.measure(job, s1))
        passes = [PassResult(1, rf1, v1, s1)]
        if not qt.accepts(v1):
            pass_index = 2
            x2 = assemble_features(features, (rf1, v1))
            rf2 = float(forward(model2, x2.values, "infer"))
            s2 = encoder.encode(job, rf2, 2)
            v2 = float(quality_meter.measure(job, s2)) if measure_second_pass else None
            passes.append(PassResult(2, rf2, v2, s2))
    except Exception as exc:
        raise SegmentError(job.index, pass_index, exc) from exc
    return SegmentResult(job.index, job.segment, passes)


# --- pipeline ------------------------------------------------------------------


@dataclass
class PipelineConfig:
    model1: ModelParams
    model2: ModelParams
    encoder: Encoder
    quality_meter: QualityMeter
    target: QualityTarget = field(default_factory=QualityTarget)
    schema: FullSchema = DEFAULT_FULL_SCHEMA
    cache: FeatureCache | None = None
    workers: int = 1
    measure_second_pass: bool = False
    stats_logs: dict[str, str] = field(default_factory=dict)  # source_id -> stats CSV path


@dataclass
class RunReport:
    results: list[SegmentResult]
    failures: list[dict]
    cache_hits: int = 0
    cache_misses: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def mean_passes(self) -> float:
        return float(np.mean([r.total_passes for r in self.results])) if self.results else 0.0

    def records(self) -> list[dict]:
        return [r.record() for r in self.results]

    def to_json(self) -> str:
        return json.dumps(
            {
                "segments": self.records(),
                "failures": self.failures,
                "mean_passes": self.mean_passes,
                "cache_hits": self.cache_hits,
                "cache_misses": self.cache_misses,
            },
            indent=2,
            sort_keys=True,
        )

    def summary(self) -> str:
        n = len(self.results)
        two = sum(r.total_passes == 2 for r in self.results)
        lines = [
            f"segments encoded: {n}",
            f"second passes:    {two}",
            f"mean passes:      {self.mean_passes:.3f}",
            f"failed segments:  {len(self.failures)}",
            f"feature cache:    {self.cache_hits} hits, {self.cache_misses} misses",
        ]
        for f in self.failures:
            lines.append(f"  segment {f['index']} pass {f['pass']}: {f['error']}")
        return "\n".join(lines)


def segment_features(
    job: SegmentJob, schema: FullSchema, cache: FeatureCache | None, stats_log: str | None = None
) -> FeatureVector:
    compute = lambda: extract_features(job.frames.frames, schema, stats_log)  # noqa: E731
    if cache is None:
        return compute()
    return cache.get_or_compute(job.source_id, schema.version, compute)


def run_pipeline(jobs: Sequence[SegmentJob], config: PipelineConfig) -> RunReport:
    """Features (cache aware) then the two-pass loop for every segment.

    Failures are collected per segment; results come back sorted by index.
    """
    hits0 = config.cache.hits if config.cache else 0
    misses0 = config.cache.misses if config.cache else 0

    def one(job: SegmentJob):
        try:
            fv = segment_features(job, config.schema, config.cache, config.stats_logs.get(job.source_id))
        except Exception as exc:
            return SegmentError(job.index, 0, exc)
        try:
            return encode_segment_two_pass(
                job, fv, config.model1, config.model2, config.encoder,
                config.quality_meter, config.target, config.measure_second_pass,
            )
        except SegmentError as exc:
            return exc

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(one, jobs))
    else:
        outcomes = [one(j) for j in jobs]

    results, failures = [], []
    for out in outcomes:
        if isinstance(out, SegmentError):
            log.error("%s", out)
            failures.append({"index": out.index, "pass": out.pass_index, "error": str(out.cause)})
        else:
            results.append(out)
    results.sort(key=lambda r: r.index)
    failures.sort(key=lambda f: f["index"])
    return RunReport(
        results,
        failures,
        (config.cache.hits - hits0) if config.cache else 0,
        (config.cache.misses - misses0) if config.cache else 0,
    )


# --- evaluation ----------------------------------------------------------------


@dataclass
class AccuracyReport:
    target: float
    bands: tuple[float, ...]
    final: dict[float, float]
    first_pass: dict[float, float] | None
    mean_passes: float
    count: int
    histogram: list[tuple[float, float, int]] = field(default_factory=list)

    def table(self) -> str:
        head = "method".ljust(22) + "".join(f"|V-{self.target:g}|<{b:g}".rjust(14) for b in self.bands)
        rows = [head]
        if self.first_pass is not None:
            rows.append("pass 1".ljust(22) + "".join(f"{self.first_pass[b]:13.2f}%" for b in self.bands))
        rows.append("final".ljust(22) + "".join(f"{self.final[b]:13.2f}%" for b in self.bands))
        rows.append(f"mean passes: {self.mean_passes:.3f} over {self.count} segments")
        return "\n".join(rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final"] = {str(k): v for k, v in self.final.items()}
        if self.first_pass is not None:
            d["first_pass"] = {str(k): v for k, v in self.first_pass.items()}
        return d


def _band_pct(values: np.ndarray, target: float, bands: Sequence[float]) -> dict[float, float]:
    err = np.abs(values - target)
    return {float(b): 100.0 * float(np.mean(err < b)) for b in bands}


def vmaf_histogram(values: Sequence[float], lo: float = 80.0, hi: float = 100.0, width: float = 0.5):
    edges = np.arange(lo, hi + width / 2, width)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
    return [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]


def accuracy_report(
    results: Sequence[tuple[float, int]],
    target: float = 91.0,
    bands: Sequence[float] = DEFAULT_BANDS,
    first_pass: Sequence[float] | None = None,
) -> AccuracyReport:
    """Band accuracies of final achieved VMAF, given (achieved, passes) per segment.

    `first_pass`, when given, holds every segment's first-pass VMAF and yields
    the pass-1-only row.
    """
    if not results:
        raise ValueError("no results to report")
    achieved = np.array([float(a) for a, _ in results])
    passes = np.array([int(p) for _, p in results])
    fp = None
    if first_pass is not None:
        fp = _band_pct(np.asarray(first_pass, dtype=np.float64), target, bands)
    return AccuracyReport(
        float(target),
        tuple(float(b) for b in bands),
        _band_pct(achieved, target, bands),
        fp,
        float(passes.mean()),
        len(results),
        vmaf_histogram(achieved),
    )


def report_from_run(run: RunReport, target: float = 91.0, bands=DEFAULT_BANDS) -> AccuracyReport:
    """Needs second passes measured (evaluation mode)."""
    final, first = [], []
    for r in run.results:
        last = r.passes[-1]
        if last.measured_quality is None:
            raise ValueError(f"segment {r.index}: final pass quality was not measured")
        final.append((last.measured_quality, r.total_passes))
        first.append(r.passes[0].measured_quality)
    return accuracy_report(final, target, bands, first)


@dataclass
class BaselineResult:
    rf: float
    mean_quality: float
    qualities: list[float]


def fixed_rf_baseline(
    jobs: Sequence[SegmentJob],
    encoder: Encoder,
    quality_meter: QualityMeter,
    target: float = 91.0,
    tol: float = 0.1,
    max_iters: int = 40,
) -> BaselineResult:
    """One RF for the whole corpus, chosen so the corpus-mean quality hits `target`."""
    if not jobs:
        raise ValueError("baseline needs at least one segment")

    def qualities(rf: float) -> list[float]:
        return [float(quality_meter.measure(j, encoder.encode(j, rf, 1))) for j in jobs]

    found = search_rf(lambda rf: float(np.mean(qualities(rf))), target, tol, max_iters)
    qs = qualities(found.rf_label)
    return BaselineResult(found.rf_label, float(np.mean(qs)), qs)

