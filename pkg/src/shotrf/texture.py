"""Spatial (GLCM) and temporal (block NCC) texture features of a segment."""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np

from .frameio import Plane

GLCM_DISTANCES = (1, 3, 5)
GLCM_LEVELS = 16
GLCM_FEATURES = ("energy", "entropy", "homogeneity", "correlation", "contrast")
NCC_BLOCK = 16
NCC_HIST_BINS = 32
STAT_NAMES = ("mean", "std", "skew", "kurtosis", "entropy")
SPATIAL_TEMPORAL_DIM = len(GLCM_DISTANCES) * len(GLCM_FEATURES) * 2 + len(STAT_NAMES) * 2


@dataclass(frozen=True)
class GlcmMatrix:
    levels: int
    probs: np.ndarray


@dataclass(frozen=True)
class StatSummary:
    mean: float
    std: float
    skew: float
    kurtosis: float
    entropy: float

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


@dataclass(frozen=True)
class FeatureVector:
    schema_version: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def quantize(samples: np.ndarray, levels: int) -> np.ndarray:
    return (samples.astype(np.int64) * levels) // 256


def glcm(plane: Plane, distance: int, levels: int = GLCM_LEVELS) -> GlcmMatrix:
    """Symmetric co-occurrence probabilities at offsets (+d, 0) and (0, +d)."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    if distance < 1:
        raise ValueError("distance must be >= 1")
    if plane.width <= distance and plane.height <= distance:
        raise ValueError(
            f"{plane.width}x{plane.height} plane has no pixel pairs at distance {distance}"
        )
    q = quantize(plane.samples, levels)
    firsts = [q[:, :-distance].ravel(), q[:-distance, :].ravel()]
    seconds = [q[:, distance:].ravel(), q[distance:, :].ravel()]
    i = np.concatenate(firsts + seconds)
    j = np.concatenate(seconds + firsts)
    counts = np.bincount(i * levels + j, minlength=levels * levels).astype(np.float64)
    probs = (counts / counts.sum()).reshape(levels, levels)
    return GlcmMatrix(levels, probs)


def glcm_features(m: GlcmMatrix) -> tuple[float, float, float, float, float]:
    """(energy, entropy, homogeneity, correlation, contrast); entropy in bits."""
    p = m.probs
    idx = np.arange(m.levels, dtype=np.float64)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    energy = float((p * p).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    homogeneity = float((p / (1.0 + np.abs(ii - jj))).sum())
    contrast = float((((ii - jj) ** 2) * p).sum())
    pi, pj = p.sum(axis=1), p.sum(axis=0)
    mu_i, mu_j = float((idx * pi).sum()), float((idx * pj).sum())
    sd_i = float(np.sqrt((((idx - mu_i) ** 2) * pi).sum()))
    sd_j = float(np.sqrt((((idx - mu_j) ** 2) * pj).sum()))
    if sd_i * sd_j == 0.0:
        correlation = 1.0
    else:
        correlation = float((((ii - mu_i) * (jj - mu_j)) * p).sum() / (sd_i * sd_j))
    return energy, entropy, homogeneity, correlation, contrast


def _tiles(x: np.ndarray, block: int) -> np.ndarray:
    h, w = x.shape
    ny, nx = h // block, w // block
    t = x[: ny * block, : nx * block].reshape(ny, block, nx, block)
    return t.transpose(0, 2, 1, 3).reshape(ny, nx, block * block)


def ncc_matrix(a: Plane, b: Plane, block: int = NCC_BLOCK) -> np.ndarray:
    """Zero-mean NCC of co-located block x block tiles; partial edge tiles dropped."""
    if a.shape != b.shape:
        raise ValueError(f"plane dimensions differ: {a.shape} vs {b.shape}")
    if block < 2:
        raise ValueError("block must be >= 2")
    if a.width < block or a.height < block:
        raise ValueError(f"{a.width}x{a.height} plane is smaller than a {block}px tile")
    ta = _tiles(a.as_float(), block)
    tb = _tiles(b.as_float(), block)
    ca = ta - ta.mean(axis=-1, keepdims=True)
    cb = tb - tb.mean(axis=-1, keepdims=True)
    saa = (ca * ca).sum(axis=-1)
    sbb = (cb * cb).sum(axis=-1)
    num = (ca * cb).sum(axis=-1)
    const_a, const_b = saa == 0, sbb == 0
    denom = np.sqrt(saa * sbb)
    out = np.divide(num, denom, out=np.zeros_like(num), where=~(const_a | const_b))
    out[const_a & const_b] = 1.0
    return np.clip(out, -1.0, 1.0)


def hist_entropy(xs: np.ndarray, bins: int) -> float:
    """Shannon entropy (bits) of a `bins`-bin histogram spanning [min, max]."""
    lo, hi = float(xs.min()), float(xs.max())
    if hi <= lo:
        return 0.0
    idx = np.floor((xs - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    p = np.bincount(idx, minlength=bins) / xs.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def moments(xs: Sequence[float], hist_bins: int) -> StatSummary:
    x = np.asarray(xs, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("moments of an empty sequence")
    if x.min() == x.max():
        # exact constant: np.mean can be an ulp off the value itself
        return StatSummary(float(x[0]), 0.0, 0.0, 0.0, 0.0)
    mean = float(x.mean())
    d = x - mean
    var = float((d * d).mean())
    if var == 0.0:
        return StatSummary(mean, 0.0, 0.0, 0.0, 0.0)
    std = var ** 0.5
    z = d / std
    z2 = z * z
    return StatSummary(
        mean,
        std,
        float((z2 * z).mean()),
        float((z2 * z2).mean()) - 3.0,
        hist_entropy(x, hist_bins),
    )


def spatial_temporal_names() -> list[str]:
    names = [
        f"glcm_d{d}_{feat}_{agg}"
        for d in GLCM_DISTANCES
        for feat in GLCM_FEATURES
        for agg in ("mean", "std")
    ]
    names += [f"ncc_{stat}_{agg}" for stat in STAT_NAMES for agg in ("mean", "std")]
    return names


def spatial_temporal_vector(
    frames: Sequence[Plane],
    levels: int = GLCM_LEVELS,
    block: int = NCC_BLOCK,
) -> np.ndarray:
    """40 values: GLCM (distance, feature, mean|std) then NCC (statistic, mean|std)."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("temporal features need at least two frames")
    per_frame = np.array(
        [[glcm_features(glcm(f, d, levels)) for d in GLCM_DISTANCES] for f in frames]
    )  # (frames, distances, features)
    spatial = np.stack([per_frame.mean(axis=0), per_frame.std(axis=0)], axis=-1)

    per_pair = np.array(
        [moments(ncc_matrix(a, b, block), NCC_HIST_BINS).as_tuple() for a, b in zip(frames, frames[1:])]
    )  # (pairs, stats)
    temporal = np.stack([per_pair.mean(axis=0), per_pair.std(axis=0)], axis=-1)
    return np.concatenate([spatial.ravel(), temporal.ravel()])
