import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import base_vector, constant_model, curve_job, echo_model
from shotrf.controller import (
    PipelineConfig,
    QualityTarget,
    SegmentError,
    SyntheticCodec,
    accuracy_report,
    assemble_features,
    encode_segment_two_pass,
    fixed_rf_baseline,
    jobs_from_corpus,
    jobs_from_video,
    report_from_run,
    run_pipeline,
    vmaf_histogram,
)
from shotrf.features import DEFAULT_FULL_SCHEMA, FeatureCache
from shotrf.frameio import FrameSequence, Plane
from shotrf.oracle import SyntheticCurveParams, generate_corpus, synth_label

CURVE = SyntheticCurveParams(30.0, 0.25)
D = 6


def two_pass(v1_target=None, rf1=None, model2=None, curve=CURVE, measure=True, qt=QualityTarget()):
    if rf1 is None:
        rf1 = synth_label(curve, v1_target)
    job = curve_job(0, curve)
    codec = SyntheticCodec()
    m2 = model2 or constant_model(D + 2, 20.0)
    return encode_segment_two_pass(job, base_vector(D), constant_model(D, rf1), m2, codec, codec, qt, measure), codec


# --- acceptance window --------------------------------------------------------


def test_quality_target_window():
    qt = QualityTarget(91)
    assert (qt.window_low, qt.window_high) == (90, 92)
    assert qt.accepts(90) and qt.accepts(92) and not qt.accepts(92.0001)
    assert QualityTarget(80).window_high == 81
    with pytest.raises(ValueError):
        QualityTarget(91, 92, 93)


def test_in_window_saves_first_pass():
    res, codec = two_pass(91.5)
    assert res.total_passes == 1
    assert res.passes[0].measured_quality == pytest.approx(91.5, abs=1e-9)
    assert codec.encodes == 1


def test_out_of_window_runs_second_pass_without_gate():
    res, _ = two_pass(88.0, model2=constant_model(D + 2, 45.0))  # terrible second guess
    assert res.total_passes == 2
    assert res.accepted_stream is res.passes[1].stream_ref
    assert res.passes[1].rf == 45.0
    assert res.passes[1].measured_quality < 50  # accepted anyway


def test_second_pass_quality_only_measured_on_request():
    res, codec = two_pass(88.0, measure=False)
    assert res.passes[1].measured_quality is None and codec.measures == 1


def test_perfect_second_pass_predictor():
    res, _ = two_pass(95.0, model2=constant_model(D + 2, synth_label(CURVE, 91)))
    assert res.passes[1].measured_quality == pytest.approx(91, abs=1e-6)


def test_feedback_layout_seen_by_second_model():
    # model2 echoes input D (rf1) and input D+1 (v1)
    r_rf, _ = two_pass(rf1=10.0, model2=echo_model(D + 2, D))
    r_v, _ = two_pass(rf1=10.0, model2=echo_model(D + 2, D + 1, offset=-50.0))
    v1 = r_v.passes[0].measured_quality
    assert r_rf.passes[1].rf == 10.0
    assert r_v.passes[1].rf == pytest.approx(v1 - 50.0, abs=1e-12)


def test_model_dimension_mismatch():
    job = curve_job(0, CURVE)
    codec = SyntheticCodec()
    with pytest.raises(ValueError):
        encode_segment_two_pass(job, base_vector(D), constant_model(D, 1), constant_model(D, 1), codec, codec)


def test_failure_carries_pass_index():
    class Flaky(SyntheticCodec):
        def encode(self, job, rf, pass_index=1):
            if pass_index == 2:
                raise OSError("disk full")
            return super().encode(job, rf, pass_index)

    codec = Flaky()
    with pytest.raises(SegmentError) as info:
        encode_segment_two_pass(curve_job(3, CURVE), base_vector(D), constant_model(D, 5.0),
                                constant_model(D + 2, 20.0), codec, codec)
    assert info.value.index == 3 and info.value.pass_index == 2


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 51), st.floats(10, 40), st.floats(0.1, 0.5))
def test_pass_two_iff_outside_window(rf1, m, k):
    curve = SyntheticCurveParams(m, k)
    res, _ = two_pass(rf1=rf1, curve=curve)
    v1 = res.passes[0].measured_quality
    assert res.total_passes in (1, 2)
    assert (res.total_passes == 2) == (not 90 <= v1 <= 92)


# --- feature assembly -----------------------------------------------------------


def test_assemble_features():
    base = base_vector(130)
    assert assemble_features(base) is base
    fb = assemble_features(base, (23.5, 88.0))
    assert len(fb) == 132 and fb.values[-2:].tolist() == [23.5, 88.0]
    assert np.array_equal(fb.values[:130], base.values)
    assert fb.schema_version.startswith(base.schema_version) and fb.schema_version != base.schema_version
    assert not np.array_equal(assemble_features(base, (88.0, 23.5)).values, fb.values)


# --- accuracy report ------------------------------------------------------------


def test_accuracy_examples():
    r = accuracy_report([(90.5, 1), (91.3, 2), (93.2, 2)], 91, (1.0,))
    assert r.final[1.0] == pytest.approx(200 / 3)
    assert r.mean_passes == pytest.approx(5 / 3)
    r = accuracy_report([(91.0, 1)] * 4, 91)
    assert all(v == 100.0 for v in r.final.values())
    with pytest.raises(ValueError):
        accuracy_report([], 91)


def test_band_edges_are_strict_and_first_pass_row():
    r = accuracy_report([(92.0, 2), (90.0, 2)], 91, (1.0, 2.0), first_pass=[85.0, 91.0])
    assert r.final == {1.0: 0.0, 2.0: 100.0}
    assert r.first_pass == {1.0: 50.0, 2.0: 50.0}
    assert "pass 1" in r.table()
    json.dumps(r.to_dict())


def test_histogram_bins():
    h = vmaf_histogram([80.0, 90.2, 90.4, 100.0, 50.0])
    assert len(h) == 40 and h[0][:2] == (80.0, 80.5)
    assert sum(c for _, _, c in h) == 5
    assert [c for lo, _, c in h if lo == 90.0] == [2]


# --- baseline -------------------------------------------------------------------


def test_baseline_on_identical_curves():
    jobs = [curve_job(i, CURVE) for i in range(10)]
    codec = SyntheticCodec()
    b = fixed_rf_baseline(jobs, codec, codec, 91, tol=0.01)
    assert b.rf == pytest.approx(synth_label(CURVE, 91), abs=0.01)
    assert accuracy_report([(q, 1) for q in b.qualities], 91).final[1.0] == 100.0


def test_baseline_mean_hits_target():
    rng = np.random.default_rng(0)
    jobs = [curve_job(i, SyntheticCurveParams(rng.uniform(16, 38), rng.uniform(0.18, 0.35))) for i in range(50)]
    codec = SyntheticCodec()
    b = fixed_rf_baseline(jobs, codec, codec, 91)
    assert abs(b.mean_quality - 91) <= 0.1
    assert len(b.qualities) == 50


# --- pipeline -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_corpus():
    return jobs_from_corpus(generate_corpus(6, seed=3), n_frames=4, width=32, height=32)


def pipeline_cfg(cache=None, workers=1, codec=None, measure=True):
    codec = codec or SyntheticCodec()
    d = DEFAULT_FULL_SCHEMA.dim
    return PipelineConfig(constant_model(d, 25.0), echo_model(d + 2, d, offset=2.0), codec, codec,
                          cache=cache, workers=workers, measure_second_pass=measure)


def test_single_shot_video():
    rng = np.random.default_rng(0)
    base = rng.integers(0, 256, (32, 32))
    frames = FrameSequence(tuple(Plane.from_array(np.roll(base, k, axis=1)) for k in range(6)))
    jobs = jobs_from_video(frames, threshold=200, min_shot_len=2)
    run = run_pipeline(jobs, pipeline_cfg())
    assert len(run.results) == 1 and run.ok
    assert run.results[0].segment.end_frame == 6


def test_pipeline_is_deterministic_and_order_stable(small_corpus):
    a = run_pipeline(small_corpus, pipeline_cfg())
    b = run_pipeline(small_corpus, pipeline_cfg(workers=3))
    assert a.to_json() == b.to_json()
    assert [r.index for r in a.results] == list(range(6))
    for r in a.results:
        if r.total_passes == 2:
            assert r.passes[1].rf == pytest.approx(min(r.passes[0].rf + 2.0, 51))
    rep = report_from_run(a)
    assert rep.count == 6


def test_warm_cache_skips_feature_work(small_corpus, tmp_path):
    cache = FeatureCache(tmp_path / "f.tsv")
    cold = run_pipeline(small_corpus, pipeline_cfg(cache))
    assert (cold.cache_hits, cold.cache_misses) == (0, 6)
    cache.save()
    warm = run_pipeline(small_corpus, pipeline_cfg(FeatureCache(tmp_path / "f.tsv")))
    assert (warm.cache_hits, warm.cache_misses) == (6, 0)
    assert warm.records() == cold.records()


def test_failures_collected_and_run_continues(small_corpus):
    class Broken(SyntheticCodec):
        def measure(self, job, stream):
            if job.index == 2:
                raise RuntimeError("meter exploded")
            return super().measure(job, stream)

    run = run_pipeline(small_corpus, pipeline_cfg(codec=Broken()))
    assert not run.ok
    assert run.failures == [{"index": 2, "pass": 1, "error": "meter exploded"}]
    assert [r.index for r in run.results] == [0, 1, 3, 4, 5]
    assert "segment 2 pass 1" in run.summary()


def test_unmeasured_run_cannot_be_scored(small_corpus):
    run = run_pipeline(small_corpus, pipeline_cfg(measure=False))
    assert any(r.total_passes == 2 for r in run.results)
    with pytest.raises(ValueError):
        report_from_run(run)
