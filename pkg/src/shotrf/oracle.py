"""Synthetic encoder and quality meter with invertible RF -> VMAF curves.

Quality follows a falling logistic in RF::

    V(rf) = c / (1 + exp(k * (rf - m))) + jitter

so the RF that hits a target quality is known in closed form.  Curves are
derived from per-segment complexity descriptors, which also drive a small
frame renderer; the rendered frames feed the real feature pipeline, giving a
learnable features -> RF relation.

Corpus file format: JSON lines, one object per synthetic segment::

    {"index": 0, "seed": 123, "descriptor": {"spatial": .., "temporal": .., "grain": ..},
     "curve": {"midpoint": .., "slope": .., "ceiling": .., "noise_sigma": ..}}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .frameio import FrameSequence, Plane, mean_abs_diff

RF_MIN, RF_MAX = 0.0, 51.0

# curve_from_features anchors: zero complexity -> easy content, full -> hard
EASY_MIDPOINT, EASY_SLOPE = 38.0, 0.35
HARD_MIDPOINT, HARD_SLOPE = 16.0, 0.18
# descriptor weights in the complexity score; they sum to 1
W_SPATIAL, W_TEMPORAL, W_GRAIN = 0.5, 0.42, 0.08


@dataclass(frozen=True)
class SyntheticCurveParams:
    midpoint: float
    slope: float
    ceiling: float = 100.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("slope must be positive")
        if not 0 < self.ceiling <= 100:
            raise ValueError("ceiling must lie in (0, 100]")
        if not RF_MIN <= self.midpoint <= RF_MAX:
            raise ValueError("midpoint must lie in [0, 51]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class ComplexityDescriptor:
    """Content complexity in [0, 1] per axis.

    `grain` is not rendered into the frames: it models encoder-relevant detail
    the analysis cannot see, so features alone never pin the RF exactly.
    """

    spatial: float
    temporal: float
    grain: float = 0.5

    def clipped(self) -> "ComplexityDescriptor":
        return ComplexityDescriptor(*(min(max(float(v), 0.0), 1.0) for v in asdict(self).values()))


def _noise(seed: int, rf: float, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    # one independent draw per (seed, rf) so re-measuring an encode is repeatable
    digest = hashlib.blake2b(f"{int(seed)}:{float(rf)!r}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return float(rng.normal(0.0, sigma))


def synth_quality(p: SyntheticCurveParams, rf: float, seed: int = 0) -> float:
    z = p.slope * (rf - p.midpoint)
    if z > 700:
        base = 0.0
    else:
        base = p.ceiling / (1.0 + math.exp(z))
    return min(max(base + _noise(seed, rf, p.noise_sigma), 0.0), 100.0)


def synth_label(p: SyntheticCurveParams, target: float) -> float:
    """Exact RF of the noise-free curve at `target`, clamped to [0, 51]."""
    if target >= p.ceiling:
        raise ValueError(f"target {target} is not below the curve ceiling {p.ceiling}")
    if target <= 0:
        raise ValueError("target must be positive")
    rf = p.midpoint + math.log(p.ceiling / target - 1.0) / p.slope
    return min(max(rf, RF_MIN), RF_MAX)


def complexity_score(d: ComplexityDescriptor) -> float:
    d = d.clipped()
    return W_SPATIAL * d.spatial + W_TEMPORAL * d.temporal + W_GRAIN * d.grain


def curve_from_features(
    d: ComplexityDescriptor, ceiling: float = 100.0, noise_sigma: float = 0.0
) -> SyntheticCurveParams:
    """Affine map complexity -> (midpoint, slope) between the easy and hard anchors."""
    c = complexity_score(d)
    return SyntheticCurveParams(
        midpoint=EASY_MIDPOINT + (HARD_MIDPOINT - EASY_MIDPOINT) * c,
        slope=EASY_SLOPE + (HARD_SLOPE - EASY_SLOPE) * c,
        ceiling=ceiling,
        noise_sigma=noise_sigma,
    )


def render_segment(
    d: ComplexityDescriptor,
    seed: int,
    width: int = 48,
    height: int = 48,
    n_frames: int = 24,
) -> FrameSequence:
    """Render frames whose texture tracks `spatial` and whose motion tracks `temporal`."""
    d = d.clipped()
    rng = np.random.default_rng(seed)
    speed = 4.0 * d.temporal  # px/frame
    pad = int(math.ceil(speed * n_frames)) + 1
    ch, cw = height, width + pad
    yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float64)
    base = np.full((ch, cw), 128.0)
    for _ in range(3):
        fy, fx = rng.uniform(0.02, 0.12, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        base += rng.uniform(10, 25) * np.sin(2 * math.pi * (fy * yy + fx * xx) + phase)
    canvas = base + rng.normal(0.0, 3.0 + 45.0 * d.spatial, size=(ch, cw))
    frames = []
    for i in range(n_frames):
        off = int(round(i * speed))
        crop = canvas[:, off : off + width]
        crop = crop + rng.normal(0.0, 0.5 + 10.0 * d.temporal, size=crop.shape)
        frames.append(Plane.from_array(np.clip(np.rint(crop), 0, 255)))
    return FrameSequence(tuple(frames))


def estimate_descriptor(frames: Sequence[Plane]) -> ComplexityDescriptor:
    """Rough descriptor for real footage: gradient energy and frame difference."""
    grads = []
    for f in frames:
        gy, gx = np.gradient(f.as_float())
        grads.append(float(np.hypot(gx, gy).mean()))
    spatial = min(float(np.mean(grads)) / 60.0, 1.0)
    if len(frames) > 1:
        temporal = min(
            float(np.mean([mean_abs_diff(a, b) for a, b in zip(frames, frames[1:])])) / 30.0, 1.0
        )
    else:
        temporal = 0.0
    return ComplexityDescriptor(spatial, temporal, 0.5)


@dataclass(frozen=True)
class CorpusRecord:
    index: int
    seed: int
    descriptor: ComplexityDescriptor
    curve: SyntheticCurveParams

    def render(self, **kwargs) -> FrameSequence:
        return render_segment(self.descriptor, self.seed, **kwargs)

    def to_json(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "seed": self.seed,
                "descriptor": asdict(self.descriptor),
                "curve": asdict(self.curve),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "CorpusRecord":
        obj = json.loads(line)
        return cls(
            int(obj["index"]),
            int(obj["seed"]),
            ComplexityDescriptor(**obj["descriptor"]),
            SyntheticCurveParams(**obj["curve"]),
        )


def generate_corpus(count: int, seed: int, noise_sigma: float = 0.0) -> list[CorpusRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        s, t, g = rng.uniform(0.0, 1.0, size=3)
        d = ComplexityDescriptor(float(s), float(t), float(g))
        seg_seed = int(rng.integers(0, 2**31 - 1))
        out.append(CorpusRecord(i, seg_seed, d, curve_from_features(d, noise_sigma=noise_sigma)))
    return out


def write_corpus(path: str | Path, records: Iterable[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    with open(path, encoding="utf-8") as fh:
        return [CorpusRecord.from_json(line) for line in fh if line.strip()]
