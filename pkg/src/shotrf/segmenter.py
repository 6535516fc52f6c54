"""Shot splitting by luma frame differencing.

Stands in for an encoder's lookahead scene-cut logic: a cut is placed before
frame t when the mean absolute luma difference to frame t-1 exceeds a
threshold and the running shot is already long enough.
"""

from __future__ import annotations

from dataclasses import dataclass

from .frameio import FrameSequence, mean_abs_diff

DEFAULT_THRESHOLD = 12.0
DEFAULT_MIN_SHOT_LEN = 25

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Segment:
    start_frame: int
    end_frame: int
    source_id: str

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError(f"empty segment [{self.start_frame}, {self.end_frame})")

    def __len__(self) -> int:
        return self.end_frame - self.start_frame


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def content_id(frames: FrameSequence, start: int = 0, end: int | None = None) -> str:
    """64-bit FNV-1a over the luma bytes of frames[start:end], as 16 hex digits."""
    end = len(frames) if end is None else end
    h = _FNV_OFFSET
    for plane in frames.frames[start:end]:
        h = fnv1a64(plane.samples.tobytes(), h)
    return f"{h:016x}"


def detect_shots(
    frames: FrameSequence,
    threshold: float = DEFAULT_THRESHOLD,
    min_shot_len: int = DEFAULT_MIN_SHOT_LEN,
) -> list[Segment]:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if min_shot_len < 1:
        raise ValueError("min_shot_len must be >= 1")
    n = len(frames)
    cuts = [0]
    for t in range(1, n):
        if t - cuts[-1] >= min_shot_len and mean_abs_diff(frames[t - 1], frames[t]) > threshold:
            cuts.append(t)
    # a cut may leave a tail shorter than min_shot_len; fold it into the previous shot
    if len(cuts) > 1 and n - cuts[-1] < min_shot_len:
        cuts.pop()
    bounds = cuts + [n]
    return [
        Segment(s, e, content_id(frames, s, e)) for s, e in zip(bounds[:-1], bounds[1:])
    ]
