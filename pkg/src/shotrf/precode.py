"""Pre-coding complexity features.

The segment is treated as an I/P alternating sequence: every frame except the
first and last is coded once as intra and once as inter against its
predecessor.  Per-frame coding statistics come either from the built-in
analysis coder below or from an external coder's CSV stats log; either way they
are summarized with five moments per feature.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .frameio import Plane
from .texture import STAT_NAMES, moments

PRECODE_HIST_BINS = 16
BLOCK = 16
SEARCH_RANGE = 8
# luma variance thresholds for block-size classing
VAR_T4 = 25.0
VAR_T16 = 400.0
# max - min spread at or below which a block counts as flat
FLAT_SPREAD = 2

INTRA_NAMES = (
    "coded_bytes",
    "ratio_mb_4x4",
    "ratio_mb_8x8",
    "ratio_mb_16x16",
    "ratio_mode_dc",
    "ratio_mode_planar_like",
    "ratio_mode_directional",
    "mean_residual_energy",
    "mean_gradient_magnitude",
    "ratio_flat_blocks",
)
INTER_NAMES = (
    "coded_bytes",
    "ratio_intra_blocks",
    "ratio_inter_blocks",
    "ratio_skip_blocks",
    "mean_mv_length",
    "std_mv_length",
    "mean_sad_after_me",
    "ratio_zero_mv",
)


class Mode(str, Enum):
    INTRA = "I"
    INTER = "P"


class StatsLogError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    version: str = "builtin-10i8p-v1"
    intra_names: tuple[str, ...] = INTRA_NAMES
    inter_names: tuple[str, ...] = INTER_NAMES
    stats: tuple[str, ...] = STAT_NAMES

    def __post_init__(self):
        for label, names in (("intra", self.intra_names), ("inter", self.inter_names)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {label} feature names")

    @property
    def dim(self) -> int:
        return (len(self.intra_names) + len(self.inter_names)) * len(self.stats)

    def names(self) -> list[str]:
        out = [f"intra_{n}_{s}" for n in self.intra_names for s in self.stats]
        out += [f"inter_{n}_{s}" for n in self.inter_names for s in self.stats]
        return out


DEFAULT_SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class IntraFrameStats:
    values: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]


@dataclass(frozen=True)
class InterFrameStats:
    values: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]


def reorganize(frames: Sequence[Plane]) -> list[tuple[Plane, Mode]]:
    """[(f1,I),(f2,P),(f2,I),(f3,P),...,(f_{n-1},I),(f_n,P)], length 2n-2."""
    n = len(frames)
    if n < 2:
        raise ValueError("reorganize needs at least two frames")
    out = []
    for k in range(n - 1):
        out.append((frames[k], Mode.INTRA))
        out.append((frames[k + 1], Mode.INTER))
    return out


def _block_grid(h: int, w: int, block: int):
    for by in range(0, h - block + 1, block):
        for bx in range(0, w - block + 1, block):
            yield by, bx


def _neighbors(x: np.ndarray, by: int, bx: int, block: int):
    """Top row, left column and corner, clamped into the frame."""
    h, w = x.shape
    ty = max(by - 1, 0)
    lx = max(bx - 1, 0)
    top = x[ty, bx : bx + block]
    left = x[by : by + block, lx]
    corner = x[ty, lx]
    return top, left, corner


def _intra_predictions(x: np.ndarray, by: int, bx: int, block: int) -> list[np.ndarray]:
    """DC, horizontal, vertical, planar-gradient predictions (that order)."""
    top, left, corner = _neighbors(x, by, bx, block)
    dc = np.full((block, block), np.round((top.sum() + left.sum()) / (2 * block)))
    horiz = np.repeat(left[:, None], block, axis=1)
    vert = np.repeat(top[None, :], block, axis=0)
    planar = np.clip(top[None, :] + left[:, None] - corner, 0, 255)
    return [dc, horiz, vert, planar]


def _dc_sad(x: np.ndarray, by: int, bx: int, block: int) -> float:
    top, left, _ = _neighbors(x, by, bx, block)
    dc = np.round((top.sum() + left.sum()) / (2 * block))
    return float(np.abs(x[by : by + block, bx : bx + block] - dc).sum())


def analyze_intra(frame: Plane, block: int = BLOCK) -> IntraFrameStats:
    x = frame.as_float()
    h, w = x.shape
    if h < block or w < block:
        raise ValueError(f"{w}x{h} frame is smaller than a {block}px block")
    n = 0
    size_counts = np.zeros(3)
    mode_counts = np.zeros(3)  # dc, planar, directional
    coded = resid = grad = 0.0
    flat = 0
    gy_full, gx_full = np.gradient(x)
    gmag = np.hypot(gx_full, gy_full)
    for by, bx in _block_grid(h, w, block):
        blk = x[by : by + block, bx : bx + block]
        preds = _intra_predictions(x, by, bx, block)
        sads = [float(np.abs(blk - p).sum()) for p in preds]
        best = int(np.argmin(sads))
        residual = blk - preds[best]
        var = float(blk.var())
        size_counts[0 if var < VAR_T4 else 1 if var < VAR_T16 else 2] += 1
        mode_counts[{0: 0, 1: 2, 2: 2, 3: 1}[best]] += 1
        coded += math.log2(1.0 + sads[best])
        resid += float((residual * residual).mean())
        grad += float(gmag[by : by + block, bx : bx + block].mean())
        flat += int(blk.max() - blk.min() <= FLAT_SPREAD)
        n += 1
    sizes = size_counts / n
    modes = mode_counts / n
    return IntraFrameStats(
        {
            "coded_bytes": coded,
            "ratio_mb_4x4": float(sizes[0]),
            "ratio_mb_8x8": float(sizes[1]),
            "ratio_mb_16x16": float(sizes[2]),
            "ratio_mode_dc": float(modes[0]),
            "ratio_mode_planar_like": float(modes[1]),
            "ratio_mode_directional": float(modes[2]),
            "mean_residual_energy": resid / n,
            "mean_gradient_magnitude": grad / n,
            "ratio_flat_blocks": flat / n,
        }
    )


def motion_search(
    blk: np.ndarray, ref: np.ndarray, by: int, bx: int, search_range: int
) -> tuple[int, int, float]:
    """Full-search SAD block matching; returns (dy, dx, sad).

    Candidates must lie fully inside the reference.  Ties go to the shorter
    vector, then to raster order of (dy, dx).
    """
    block = blk.shape[0]
    h, w = ref.shape
    y0, y1 = max(by - search_range, 0), min(by + search_range, h - block)
    x0, x1 = max(bx - search_range, 0), min(bx + search_range, w - block)
    region = ref[y0 : y1 + block, x0 : x1 + block]
    windows = sliding_window_view(region, (block, block))
    sad = np.abs(windows - blk).sum(axis=(2, 3))
    dys = np.arange(y0, y1 + 1) - by
    dxs = np.arange(x0, x1 + 1) - bx
    dy, dx = np.meshgrid(dys, dxs, indexing="ij")
    order = np.lexsort((dx.ravel(), dy.ravel(), (dy * dy + dx * dx).ravel(), sad.ravel()))
    k = order[0]
    return int(dy.ravel()[k]), int(dx.ravel()[k]), float(sad.ravel()[k])


def analyze_inter(
    frame: Plane, ref: Plane, block: int = BLOCK, search_range: int = SEARCH_RANGE
) -> InterFrameStats:
    if frame.shape != ref.shape:
        raise ValueError(f"frame {frame.shape} and reference {ref.shape} differ in size")
    x, r = frame.as_float(), ref.as_float()
    h, w = x.shape
    if h < block or w < block:
        raise ValueError(f"{w}x{h} frame is smaller than a {block}px block")
    n = skip = intra = zero_mv = 0
    coded = sad_total = 0.0
    mv_lengths = []
    for by, bx in _block_grid(h, w, block):
        blk = x[by : by + block, bx : bx + block]
        n += 1
        if np.array_equal(blk, r[by : by + block, bx : bx + block]):
            skip += 1
            zero_mv += 1
            continue
        dy, dx, sad = motion_search(blk, r, by, bx, search_range)
        dc = _dc_sad(x, by, bx, block)
        if sad > dc:
            intra += 1
            best = dc
        else:
            best = sad
        mv_lengths.append(math.hypot(dy, dx))
        zero_mv += int(dy == 0 and dx == 0)
        coded += math.log2(1.0 + best)
        sad_total += best
    mv = np.array(mv_lengths) if mv_lengths else np.zeros(1)
    return InterFrameStats(
        {
            "coded_bytes": coded,
            "ratio_intra_blocks": intra / n,
            "ratio_inter_blocks": (n - skip - intra) / n,
            "ratio_skip_blocks": skip / n,
            "mean_mv_length": float(mv.mean()),
            "std_mv_length": float(mv.std()),
            "mean_sad_after_me": sad_total / n,
            "ratio_zero_mv": zero_mv / n,
        }
    )


def analyze_segment(
    frames: Sequence[Plane], block: int = BLOCK, search_range: int = SEARCH_RANGE
) -> tuple[list[IntraFrameStats], list[InterFrameStats]]:
    """Built-in pre-coder over the I/P reorganized sequence.

    Video' is not materialized; each INTER entry is coded against the
    preceding INTRA entry's frame, i.e. its original predecessor.
    """
    seq = reorganize(frames)
    intra, inter = [], []
    for k, (plane, mode) in enumerate(seq):
        if mode is Mode.INTRA:
            intra.append(analyze_intra(plane, block))
        else:
            inter.append(analyze_inter(plane, seq[k - 1][0], block, search_range))
    return intra, inter


def aggregate(
    intra: Sequence[IntraFrameStats],
    inter: Sequence[InterFrameStats],
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> np.ndarray:
    if not intra or not inter:
        raise ValueError("need at least one intra and one inter frame")
    out = []
    for names, rows in ((schema.intra_names, intra), (schema.inter_names, inter)):
        for name in names:
            out.extend(moments([r[name] for r in rows], PRECODE_HIST_BINS).as_tuple())
    return np.array(out)


def precoding_vector(
    frames: Sequence[Plane], schema: FeatureSchema = DEFAULT_SCHEMA
) -> np.ndarray:
    if len(frames) < 2:
        raise ValueError("pre-coding features need at least two frames")
    if schema.intra_names != INTRA_NAMES or schema.inter_names != INTER_NAMES:
        raise ValueError(
            f"built-in pre-coder only produces schema {DEFAULT_SCHEMA.version}; "
            "use a stats log for other schemas"
        )
    intra, inter = analyze_segment(frames)
    return aggregate(intra, inter, schema)


# --- stats log adapter -------------------------------------------------------
#
# CSV, header `frame_index,mode,<names...>` where <names> is the union of the
# schema's intra and inter names in the order intra names then any inter names
# not already present.  mode is I or P.  Cells of features that do not apply
# to a row's mode may be left empty.


def stats_log_columns(schema: FeatureSchema) -> list[str]:
    cols = list(schema.intra_names)
    cols += [n for n in schema.inter_names if n not in cols]
    return cols


def write_stats_log(
    out: TextIO,
    intra: Sequence[IntraFrameStats],
    inter: Sequence[InterFrameStats],
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> None:
    """Rows in I/P coding order; floats written with repr so they re-read exactly."""
    cols = stats_log_columns(schema)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["frame_index", "mode"] + cols)
    rows = []
    for k in range(max(len(intra), len(inter))):
        if k < len(intra):
            rows.append((Mode.INTRA, intra[k], schema.intra_names))
        if k < len(inter):
            rows.append((Mode.INTER, inter[k], schema.inter_names))
    for idx, (mode, stats, names) in enumerate(rows):
        writer.writerow(
            [idx, mode.value] + [repr(float(stats[c])) if c in names else "" for c in cols]
        )


def parse_stats_log(
    log: str | Path | TextIO, schema: FeatureSchema = DEFAULT_SCHEMA
) -> tuple[list[IntraFrameStats], list[InterFrameStats]]:
    if isinstance(log, (str, Path)):
        with open(log, newline="") as fh:
            return parse_stats_log(fh, schema)
    reader = csv.reader(log)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise StatsLogError("line 1: empty stats log") from None
    expected = stats_log_columns(schema)
    if header[:2] != ["frame_index", "mode"]:
        raise StatsLogError("line 1: header must start with frame_index,mode")
    for col in header[2:]:
        if col not in expected:
            raise StatsLogError(f"line 1: unknown column {col!r}")
    if len(set(header)) != len(header):
        raise StatsLogError("line 1: duplicate column")
    for col in expected:
        if col not in header:
            raise StatsLogError(f"line 1: missing column {col!r}")
    pos = {name: i for i, name in enumerate(header)}

    intra, inter = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise StatsLogError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            int(row[0])
        except ValueError:
            raise StatsLogError(f"line {lineno}: non-numeric frame_index {row[0]!r}") from None
        mode = row[1].strip()
        if mode not in ("I", "P"):
            raise StatsLogError(f"line {lineno}: mode must be I or P, got {mode!r}")
        names = schema.intra_names if mode == "I" else schema.inter_names
        values = {}
        for name in names:
            cell = row[pos[name]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise StatsLogError(
                    f"line {lineno}: non-numeric value {cell!r} in column {name!r}"
                ) from None
            if not math.isfinite(v):
                raise StatsLogError(f"line {lineno}: non-finite value in column {name!r}")
            values[name] = v
        if mode == "I":
            intra.append(IntraFrameStats(values))
        else:
            inter.append(InterFrameStats(values))
    return intra, inter


def stats_log_text(
    intra: Iterable[IntraFrameStats], inter: Iterable[InterFrameStats], schema=DEFAULT_SCHEMA
) -> str:
    buf = io.StringIO()
    write_stats_log(buf, list(intra), list(inter), schema)
    return buf.getvalue()
