"""Full per-segment feature vector and its on-disk cache.

Cache file format (UTF-8 text, one record per line, tab separated)::

    <source_id>\t<schema_version>\t<v0>,<v1>,...

Values are written with ``repr`` so they re-read bit-identically.  Lines
starting with ``#`` are comments.  Later records for the same source_id win.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .frameio import Plane
from .precode import DEFAULT_SCHEMA, FeatureSchema, aggregate, parse_stats_log, precoding_vector
from .texture import SPATIAL_TEMPORAL_DIM, FeatureVector, spatial_temporal_names, spatial_temporal_vector


@dataclass(frozen=True)
class FullSchema:
    """Spatial-temporal block followed by the pre-coding block."""

    precode: FeatureSchema = DEFAULT_SCHEMA

    @property
    def version(self) -> str:
        return f"st{SPATIAL_TEMPORAL_DIM}+{self.precode.version}"

    @property
    def dim(self) -> int:
        return SPATIAL_TEMPORAL_DIM + self.precode.dim

    def names(self) -> list[str]:
        return spatial_temporal_names() + self.precode.names()


DEFAULT_FULL_SCHEMA = FullSchema()


def extract_features(
    frames: Sequence[Plane],
    schema: FullSchema = DEFAULT_FULL_SCHEMA,
    stats_log: str | Path | None = None,
) -> FeatureVector:
    """Spatial-temporal + pre-coding features; pre-coding comes from `stats_log` if given."""
    st = spatial_temporal_vector(frames)
    if stats_log is None:
        pc = precoding_vector(frames, schema.precode)
    else:
        intra, inter = parse_stats_log(stats_log, schema.precode)
        pc = aggregate(intra, inter, schema.precode)
    return FeatureVector(schema.version, np.concatenate([st, pc]))


class FeatureCache:
    """source_id -> FeatureVector, with hit/miss counters."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._records: dict[str, FeatureVector] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            self._records.update(read_cache(self.path))

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._records

    def get(self, source_id: str, schema_version: str) -> FeatureVector | None:
        with self._lock:
            fv = self._records.get(source_id)
            if fv is not None and fv.schema_version == schema_version:
                self.hits += 1
                return fv
            self.misses += 1
            return None

    def put(self, source_id: str, fv: FeatureVector) -> None:
        with self._lock:
            self._records[source_id] = fv

    def get_or_compute(self, source_id: str, schema_version: str, compute) -> FeatureVector:
        fv = self.get(source_id, schema_version)
        if fv is None:
            fv = compute()
            self.put(source_id, fv)
        return fv

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path) if path else self.path
        if target is None:
            raise ValueError("no cache path configured")
        write_cache(target, self._records)


def format_record(source_id: str, fv: FeatureVector) -> str:
    return f"{source_id}\t{fv.schema_version}\t{','.join(repr(float(v)) for v in fv.values)}"


def parse_record(line: str) -> tuple[str, FeatureVector]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise ValueError(f"feature cache record needs 3 tab-separated fields, got {len(parts)}")
    sid, version, values = parts
    vals = [float(v) for v in values.split(",")] if values else []
    return sid, FeatureVector(version, np.array(vals))


def write_cache(path: str | Path, records: dict[str, FeatureVector]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("# shotrf feature cache: source_id, schema_version, values\n")
        for sid in sorted(records):
            fh.write(format_record(sid, records[sid]) + "\n")
    tmp.replace(path)


def read_cache(path: str | Path) -> dict[str, FeatureVector]:
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                sid, fv = parse_record(line)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            records[sid] = fv
    return records
