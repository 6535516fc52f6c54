"""Command-line entry point: ``shotrf <subcommand> [options]``.

Every option can also come from a TOML config file (``--config``); keys are
the long option names with dashes or underscores, and command-line flags win
over the file.  Exit codes: 0 success, 1 runtime failure, 2 configuration or
usage error, 3 ``run`` finished but some segments failed.

Artifacts (formats documented in the owning modules):

    synth-corpus   corpus JSONL                          (oracle)
    segment        segments CSV: index,start_frame,end_frame,source_id
    features       feature cache TSV                     (features)
    label          labels CSV                            (labeler)
    train          model file                            (model); pass 2 also writes
                   the pass-1 feedback CSV: source_id,rf1,v1
    run            run report JSON (per-segment rf1, v1, rf2, v2, passes)
    baseline       baseline JSON
    report         accuracy table on stdout + histogram CSV: lo,hi,count
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .adapters import (
    ENCODER_PLACEHOLDERS,
    METER_PLACEHOLDERS,
    AdapterSpec,
    ExternalEncoder,
    ExternalQualityMeter,
    set_process_limit,
)
from .controller import (
    PipelineConfig,
    QualityTarget,
    SegmentJob,
    SyntheticCodec,
    accuracy_report,
    feedback_schema,
    fixed_rf_baseline,
    jobs_from_corpus,
    jobs_from_video,
    run_pipeline,
    segment_features,
)
from .features import DEFAULT_FULL_SCHEMA, FeatureCache
from .frameio import load_y4m
from .labeler import read_labels, write_labels
from .model import ModelFormatError, SchemaMismatch, TrainConfig, load_model, save_model
from .oracle import generate_corpus, read_corpus, write_corpus
from .workflow import (
    ExperimentConfig,
    feedback_probes,
    first_pass_feedback,
    label_jobs,
    pass_configs,
    split_sizes,
    train_pass1,
    train_pass2,
)

log = logging.getLogger("shotrf")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

# Every configurable key with its default; the default's type is the key's type.
DEFAULTS: dict[str, Any] = {
    "seed": 7,
    "corpus": None,
    "input": None,
    "workdir": "shotrf-work",
    "scene_threshold": 12.0,
    "min_shot_len": 25,
    "precode": "builtin",
    "cache": "features.tsv",
    "labels": "labels.csv",
    "model1": "model1.bin",
    "model2": "model2.bin",
    "feedback": "feedback2.csv",
    "report": "report.json",
    "histogram": "histogram.csv",
    "out": None,
    "count": 2000,
    "noise_sigma": 0.3,
    "split": [0.6, 0.3],
    "scope": None,
    "target_vmaf": 91.0,
    "bands": [1.0, 2.0, 3.0, 4.0],
    "tol": 0.1,
    "max_iters": 12,
    "encoder": "synthetic",
    "quality_meter": "synthetic",
    "quality_parse": "last-float",
    "adapter_timeout": 600.0,
    "max_procs": 1,
    "workers": 1,
    "measure_second_pass": False,
    "learning_rate": None,
    "epochs": None,
    "batch_size": None,
    "hidden": None,
    "blocks": None,
    "weight_decay": None,
    "feedback_probes": 7,
    "probe_sigma": 1.0,
}
_FLOAT_KEYS = {"learning_rate", "weight_decay"}
_INT_KEYS = {"epochs", "batch_size", "hidden", "blocks"}
_STR_KEYS = {"corpus", "input", "out", "scope"}


class ConfigError(ValueError):
    pass


class Settings:
    """Defaults < config file < command-line flags."""

    def __init__(self, file_values: dict[str, Any], flag_values: dict[str, Any]):
        self._values = dict(DEFAULTS)
        self.explicit: set[str] = set()
        for key, value in file_values.items():
            self._values[key] = _coerce(key, value)
            self.explicit.add(key)
        for key, value in flag_values.items():
            if value is not None and key in DEFAULTS:
                self._values[key] = _coerce(key, value)
                self.explicit.add(key)

    def __getattr__(self, key: str) -> Any:
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    try:
        if value is None:
            return None
        if key in _FLOAT_KEYS or isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key in _INT_KEYS or isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return [float(v) for v in value]
        if key in _STR_KEYS or isinstance(default, str):
            if not isinstance(value, (str, Path)):
                raise TypeError
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    out = {}
    for key, value in raw.items():
        norm = key.replace("-", "_")
        if norm not in DEFAULTS:
            raise ConfigError(f"config {path}: unknown key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"config {path}: tables are not supported ({key!r})")
        out[norm] = value
    return out


# --- shared plumbing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with option defaults")
    common.add_argument("--seed", type=int, help="single seed for all randomness (default 7)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    source = argparse.ArgumentParser(add_help=False)
    g = source.add_argument_group("segment source")
    g.add_argument("--corpus", help="synthetic corpus JSONL")
    g.add_argument("--input", help="Y4M video; split into shots")
    g.add_argument("--scene-threshold", type=float, help="mean absolute luma difference for a cut (12)")
    g.add_argument("--min-shot-len", type=int, help="minimum shot length in frames (25)")
    g.add_argument("--split", help="pass-1,pass-2 training fractions (0.6,0.3); the rest is held out")
    g.add_argument("--scope", choices=("all", "train", "train1", "train2", "heldout"),
                   help="which segments to process")
    g.add_argument("--workdir", help="scratch directory for adapter files (shotrf-work)")

    codec = argparse.ArgumentParser(add_help=False)
    g = codec.add_argument_group("encoder and quality meter")
    g.add_argument("--encoder", help="'synthetic' or command template with {input} {output} {rf}")
    g.add_argument("--quality-meter", help="'synthetic' or command template with {input} {reference}")
    g.add_argument("--quality-parse", help="quality parse rule: last-float | float after '<prefix>'")
    g.add_argument("--adapter-timeout", type=float, help="seconds per adapter process (600)")
    g.add_argument("--max-procs", type=int, help="concurrent adapter processes (1)")
    g.add_argument("--target-vmaf", type=float, help="quality target (91)")

    feat = argparse.ArgumentParser(add_help=False)
    g = feat.add_argument_group("features")
    g.add_argument("--cache", help="feature cache file (features.tsv)")
    g.add_argument("--precode", help="builtin | log:<csv or directory of <source_id>.csv>")

    trainp = argparse.ArgumentParser(add_help=False)
    g = trainp.add_argument_group("training")
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--blocks", type=int)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--feedback-probes", type=int, help="extra pass-2 training encodes per segment (7)")
    g.add_argument("--probe-sigma", type=float, help="RF spread of those encodes (1.0)")

    p = argparse.ArgumentParser(prog="shotrf", description="Per-shot RF prediction with two-pass feedback.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth-corpus", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--count", type=int, help="segments (2000)")
    s.add_argument("--noise-sigma", type=float, help="quality noise of the synthetic codec (0.3)")
    s.add_argument("--out", help="output JSONL (corpus.jsonl)")

    s = sub.add_parser("segment", parents=[common, source], help="split a video into shots")
    s.add_argument("--out", help="segments CSV (segments.csv)")

    sub.add_parser("features", parents=[common, source, feat], help="extract features into the cache")

    s = sub.add_parser("label", parents=[common, source, codec], help="search ground-truth RF labels")
    s.add_argument("--tol", type=float, help="VMAF tolerance (0.1)")
    s.add_argument("--max-iters", type=int, help="search iterations after the rail probes (12)")
    s.add_argument("--labels", help="labels CSV (labels.csv)")

    s = sub.add_parser("train", parents=[common, source, codec, feat, trainp], help="train a pass model")
    s.add_argument("--pass", dest="pass_index", type=int, choices=(1, 2), required=True)
    s.add_argument("--labels", help="labels CSV (labels.csv)")
    s.add_argument("--model1", help="pass-1 model file (model1.bin)")
    s.add_argument("--model2", help="pass-2 model file (model2.bin)")
    s.add_argument("--feedback", help="pass-1 feedback CSV written by pass-2 training (feedback2.csv)")

    s = sub.add_parser("run", parents=[common, source, codec, feat], help="two-pass encode")
    s.add_argument("--model1")
    s.add_argument("--model2")
    s.add_argument("--report", help="run report JSON (report.json)")
    s.add_argument("--workers", type=int, help="parallel segments (1)")
    s.add_argument("--measure-second-pass", action="store_true", default=None,
                   help="also measure pass-2 quality (evaluation mode)")

    s = sub.add_parser("baseline", parents=[common, source, codec], help="fixed-RF baseline")
    s.add_argument("--out", help="baseline JSON (baseline.json)")
    s.add_argument("--bands", help="comma-separated bands (1,2,3,4)")

    s = sub.add_parser("report", parents=[common], help="accuracy table and histogram from a run report")
    s.add_argument("--report", help="run report JSON (report.json)")
    s.add_argument("--histogram", help="histogram CSV (histogram.csv)")
    s.add_argument("--target-vmaf", type=float)
    s.add_argument("--bands", help="comma-separated bands (1,2,3,4)")
    return p


def load_jobs(st: Settings, default_scope: str = "all") -> list[SegmentJob]:
    if (st.corpus is None) == (st.input is None):
        raise ConfigError("give exactly one of --corpus or --input")
    if st.corpus is not None:
        jobs = jobs_from_corpus(read_corpus(st.corpus))
    else:
        jobs = jobs_from_video(load_y4m(st.input), st.scene_threshold, st.min_shot_len, st.seed)
    return select(jobs, st.scope or default_scope, st.split)


def select(jobs: Sequence[SegmentJob], scope: str, split: Sequence[float]) -> list[SegmentJob]:
    if len(split) != 2:
        raise ConfigError("split needs two fractions")
    try:
        n1, n2, _ = split_sizes(len(jobs), tuple(split))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ranges = {
        "all": (0, len(jobs)),
        "train": (0, n1 + n2),
        "train1": (0, n1),
        "train2": (n1, n1 + n2),
        "heldout": (n1 + n2, len(jobs)),
    }
    lo, hi = ranges[scope]
    return list(jobs[lo:hi])


def make_codec(st: Settings):
    """(encoder, quality meter) from settings; 'synthetic' uses the logistic oracle."""
    set_process_limit(st.max_procs)
    synthetic = SyntheticCodec()
    try:
        if st.encoder == "synthetic":
            encoder = synthetic
        else:
            encoder = ExternalEncoder(
                AdapterSpec(st.encoder, st.adapter_timeout, "output-file", ENCODER_PLACEHOLDERS), st.workdir
            )
        if st.quality_meter == "synthetic":
            meter = synthetic
        else:
            meter = ExternalQualityMeter(
                AdapterSpec(st.quality_meter, st.adapter_timeout, st.quality_parse, METER_PLACEHOLDERS),
                st.workdir,
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if (encoder is synthetic) != (meter is synthetic):
        raise ConfigError("the synthetic encoder and quality meter only work as a pair")
    return encoder, meter


def stats_logs(st: Settings, jobs: Sequence[SegmentJob]) -> dict[str, str]:
    if st.precode == "builtin":
        return {}
    if not st.precode.startswith("log:"):
        raise ConfigError(f"--precode must be 'builtin' or 'log:<path>', got {st.precode!r}")
    path = Path(st.precode[4:])
    if path.is_dir():
        return {j.source_id: str(path / f"{j.source_id}.csv") for j in jobs}
    if not path.is_file():
        raise ConfigError(f"stats log {path} does not exist")
    if len(jobs) != 1:
        raise ConfigError("a single stats log file only fits a single segment; pass a directory")
    return {jobs[0].source_id: str(path)}


def feature_matrix(st: Settings, jobs: Sequence[SegmentJob], cache: FeatureCache) -> np.ndarray:
    logs = stats_logs(st, jobs)
    return np.stack(
        [segment_features(j, DEFAULT_FULL_SCHEMA, cache, logs.get(j.source_id)).values for j in jobs]
    )


def labels_for(st: Settings, jobs: Sequence[SegmentJob]) -> list[float]:
    if not Path(st.labels).is_file():
        raise ConfigError(f"labels file {st.labels} not found; run `label` first")
    by_id = {r.source_id: r.rf_label for r in read_labels(st.labels)}
    missing = [j.index for j in jobs if j.source_id not in by_id]
    if missing:
        raise ConfigError(f"labels file {st.labels} has no label for segment(s) {missing[:10]}")
    return [by_id[j.source_id] for j in jobs]


def train_config(st: Settings, base: TrainConfig) -> TrainConfig:
    overrides = {
        k: getattr(st, k)
        for k in ("learning_rate", "epochs", "batch_size", "hidden", "blocks", "weight_decay")
        if getattr(st, k) is not None
    }
    try:
        return replace(base, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- subcommands ---------------------------------------------------------------------


def cmd_synth_corpus(st: Settings) -> int:
    out = st.out or "corpus.jsonl"
    records = generate_corpus(st.count, st.seed, st.noise_sigma)
    write_corpus(out, records)
    print(f"wrote {len(records)} synthetic segments to {out}")
    return EXIT_OK


def cmd_segment(st: Settings) -> int:
    if st.input is None:
        raise ConfigError("segment needs --input")
    out = st.out or "segments.csv"
    jobs = jobs_from_video(load_y4m(st.input), st.scene_threshold, st.min_shot_len, st.seed)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "start_frame", "end_frame", "source_id"])
        for j in jobs:
            w.writerow([j.index, j.segment.start_frame, j.segment.end_frame, j.source_id])
    print(f"wrote {len(jobs)} segments to {out}")
    return EXIT_OK


def cmd_features(st: Settings) -> int:
    jobs = load_jobs(st)
    cache = FeatureCache(st.cache)
    feature_matrix(st, jobs, cache)
    cache.save()
    print(f"features for {len(jobs)} segments in {st.cache} ({cache.hits} cached, {cache.misses} computed)")
    return EXIT_OK


def cmd_label(st: Settings) -> int:
    jobs = load_jobs(st)
    encoder, meter = make_codec(st)
    records = label_jobs(jobs, encoder, meter, st.target_vmaf, st.tol, st.max_iters)
    write_labels(st.labels, records)
    bad = sum(not r.converged for r in records)
    print(f"labeled {len(records)} segments into {st.labels}; {bad} not converged")
    return EXIT_OK


def cmd_train(st: Settings, pass_index: int) -> int:
    defaults = ExperimentConfig()
    cfg1, cfg2 = pass_configs(st.seed, train_config(st, defaults.train1), train_config(st, defaults.train2))
    cache = FeatureCache(st.cache)
    schema = DEFAULT_FULL_SCHEMA
    if pass_index == 1:
        jobs = load_jobs(st, "train1")
        labels = labels_for(st, jobs)
        model = train_pass1(feature_matrix(st, jobs, cache), labels, cfg1, schema.version)
        save_model(model, st.model1)
        print(f"pass-1 model trained on {len(jobs)} segments -> {st.model1} "
              f"(final loss {model.loss_trace[-1] if model.loss_trace else float('nan'):.4f})")
        return EXIT_OK

    if not Path(st.model1).is_file():
        raise ConfigError(f"pass-2 training needs the pass-1 model {st.model1}; run `train --pass 1` first")
    model1 = load_model(st.model1, schema.version)
    jobs = load_jobs(st, "train2")
    labels = labels_for(st, jobs)
    X = feature_matrix(st, jobs, cache)
    encoder, meter = make_codec(st)
    fb = first_pass_feedback(model1, jobs, X, encoder, meter)
    with open(st.feedback, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "rf1", "v1"])
        for j, (rf1, v1) in zip(jobs, fb):
            w.writerow([j.source_id, repr(float(rf1)), repr(float(v1))])
    extra = feedback_probes(jobs, fb, encoder, meter, st.feedback_probes, st.probe_sigma, st.seed)
    model = train_pass2(X, [fb, *extra], labels, cfg2, schema.version)
    save_model(model, st.model2)
    print(f"pass-2 model trained on {len(jobs)} segments x {1 + st.feedback_probes} feedback pairs "
          f"-> {st.model2}; pass-1 feedback in {st.feedback}")
    return EXIT_OK


def cmd_run(st: Settings) -> int:
    schema = DEFAULT_FULL_SCHEMA
    for path in (st.model1, st.model2):
        if not Path(path).is_file():
            raise ConfigError(f"model file {path} not found; run `train` first")
    model1 = load_model(st.model1, schema.version)
    model2 = load_model(st.model2, feedback_schema(schema.version))
    jobs = load_jobs(st, "heldout" if st.corpus else "all")
    encoder, meter = make_codec(st)
    cfg = PipelineConfig(
        model1, model2, encoder, meter, QualityTarget(st.target_vmaf), schema,
        FeatureCache(st.cache), st.workers, st.measure_second_pass, stats_logs(st, jobs),
    )
    run = run_pipeline(jobs, cfg)
    payload = json.loads(run.to_json())
    payload["target"] = st.target_vmaf
    write_json(st.report, payload)
    print(run.summary())
    print(f"report: {st.report}")
    if run.failures:
        for f in run.failures:
            print(f"segment {f['index']} failed in pass {f['pass']}: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_baseline(st: Settings) -> int:
    jobs = load_jobs(st, "heldout" if st.corpus else "all")
    encoder, meter = make_codec(st)
    res = fixed_rf_baseline(jobs, encoder, meter, st.target_vmaf)
    rep = accuracy_report([(q, 1) for q in res.qualities], st.target_vmaf, st.bands)
    out = st.out or "baseline.json"
    write_json(out, {"rf": res.rf, "mean_quality": res.mean_quality, "qualities": res.qualities,
                     "accuracy": rep.to_dict()})
    print(f"fixed RF {res.rf:.3f} (corpus mean VMAF {res.mean_quality:.3f})")
    print(rep.table().replace("final ", "fixed ", 1))
    return EXIT_OK


def cmd_report(st: Settings) -> int:
    try:
        data = json.loads(Path(st.report).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read run report {st.report}: {exc}") from None
    target = st.target_vmaf if "target_vmaf" in st.explicit else data.get("target", st.target_vmaf)
    segs = data.get("segments", [])
    finals, firsts = [], []
    for s in segs:
        final = s["v2"] if s["passes"] == 2 else s["v1"]
        if final is None:
            raise RuntimeError(
                f"segment {s['index']} has no measured final quality; rerun `run --measure-second-pass`"
            )
        finals.append((final, s["passes"]))
        firsts.append(s["v1"])
    rep = accuracy_report(finals, target, st.bands, firsts)
    with open(st.histogram, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lo", "hi", "count"])
        w.writerows(rep.histogram)
    print(rep.table())
    print(f"histogram: {st.histogram}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        st = Settings(load_config(args.config), vars(args))
        handlers = {
            "synth-corpus": cmd_synth_corpus,
            "segment": cmd_segment,
            "features": cmd_features,
            "label": cmd_label,
            "run": cmd_run,
            "baseline": cmd_baseline,
            "report": cmd_report,
        }
        if args.command == "train":
            return cmd_train(st, args.pass_index)
        return handlers[args.command](st)
    except ConfigError as exc:
        print(f"shotrf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaMismatch, ModelFormatError) as exc:
        print(f"shotrf: model error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"shotrf: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
