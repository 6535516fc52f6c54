"""Raw video input: YUV4MPEG2 parsing and 8-bit luma planes."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import BinaryIO, Iterable, Sequence

import numpy as np

Y4M_MAGIC = b"YUV4MPEG2"
FRAME_TAG = b"FRAME"

# chroma bytes per luma pixel, as (num, den) of W*H, for the supported layouts
_CHROMA_LAYOUTS = {
    "420": (1, 2),
    "420jpeg": (1, 2),
    "420paldv": (1, 2),
    "420mpeg2": (1, 2),
    "mono": (0, 1),
}


class Y4MError(ValueError):
    """Malformed or truncated YUV4MPEG2 input."""


@dataclass(frozen=True, eq=False)
class Plane:
    """One frame's luma raster, row-major uint8."""

    width: int
    height: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"plane dimensions must be positive, got {self.width}x{self.height}")
        arr = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if arr.size != self.width * self.height:
            raise ValueError(
                f"plane has {arr.size} samples, expected {self.width}*{self.height}"
            )
        arr = arr.reshape(self.height, self.width)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.width, self.height, self.samples.tobytes()))

    @classmethod
    def from_array(cls, arr) -> "Plane":
        a = np.asarray(arr)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        if a.dtype != np.uint8:
            a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
        return cls(a.shape[1], a.shape[0], a)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[Plane, ...]
    frame_rate: Fraction = Fraction(25, 1)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a frame sequence needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise ValueError(f"frame {i} is {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_rate", Fraction(self.frame_rate))

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return FrameSequence(self.frames[idx], self.frame_rate)
        return self.frames[idx]

    def __iter__(self):
        return iter(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @classmethod
    def from_arrays(cls, arrays: Iterable, frame_rate=Fraction(25, 1)) -> "FrameSequence":
        return cls(tuple(Plane.from_array(a) for a in arrays), frame_rate)


def _parse_header(line: bytes) -> tuple[int, int, Fraction, str]:
    tokens = line.split()
    if not tokens or tokens[0] != Y4M_MAGIC:
        raise Y4MError(f"bad stream signature {tokens[0]!r}" if tokens else "empty header")
    width = height = None
    rate = Fraction(25, 1)
    colorspace = "420jpeg"
    for tok in tokens[1:]:
        key, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        try:
            if key == "W":
                width = int(val)
            elif key == "H":
                height = int(val)
            elif key == "F":
                num, den = val.split(":")
                rate = Fraction(int(num), int(den))
            elif key == "C":
                colorspace = val
            # I, A, X tokens carry nothing luma-relevant
        except (ValueError, ZeroDivisionError):
            raise Y4MError(f"malformed header token {tok.decode('ascii', 'replace')!r}") from None
    if width is None or height is None:
        raise Y4MError("header lacks W or H token")
    if width <= 0:
        raise Y4MError(f"invalid header token 'W{width}'")
    if height <= 0:
        raise Y4MError(f"invalid header token 'H{height}'")
    if colorspace not in _CHROMA_LAYOUTS:
        raise Y4MError(f"unsupported header token 'C{colorspace}'")
    return width, height, rate, colorspace


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def read_y4m(stream: BinaryIO | bytes) -> FrameSequence:
    """Parse a YUV4MPEG2 stream, keeping only the luma plane of each frame."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    header = stream.readline()
    if not header.endswith(b"\n"):
        raise Y4MError("unterminated stream header")
    width, height, rate, colorspace = _parse_header(header)
    luma = width * height
    num, den = _CHROMA_LAYOUTS[colorspace]
    chroma = 2 * ((width + 1) // 2) * ((height + 1) // 2) if num else 0

    frames = []
    while True:
        line = stream.readline()
        if not line:
            break
        if not line.startswith(FRAME_TAG):
            raise Y4MError(f"expected FRAME marker before frame {len(frames)}, got {line[:16]!r}")
        data = _read_exact(stream, luma)
        if len(data) < luma:
            raise Y4MError(f"truncated luma payload in frame {len(frames)}")
        skipped = _read_exact(stream, chroma)
        if len(skipped) < chroma:
            raise Y4MError(f"truncated chroma payload in frame {len(frames)}")
        frames.append(Plane(width, height, np.frombuffer(data, dtype=np.uint8)))
    if not frames:
        raise Y4MError("stream contains no frames")
    return FrameSequence(tuple(frames), rate)


def write_y4m(seq: FrameSequence, stream: BinaryIO | None = None, mono: bool = False) -> bytes | None:
    """Debug helper: serialize luma planes, padding 4:2:0 chroma with neutral grey."""
    out = io.BytesIO() if stream is None else stream
    rate = seq.frame_rate
    cs = "mono" if mono else "420jpeg"
    out.write(f"YUV4MPEG2 W{seq.width} H{seq.height} F{rate.numerator}:{rate.denominator} Ip A1:1 C{cs}\n".encode())
    chroma = b"" if mono else b"\x80" * (2 * ((seq.width + 1) // 2) * ((seq.height + 1) // 2))
    for f in seq:
        out.write(FRAME_TAG + b"\n")
        out.write(f.samples.tobytes())
        out.write(chroma)
    if stream is None:
        return out.getvalue()
    return None


def load_y4m(path) -> FrameSequence:
    with open(path, "rb") as fh:
        return read_y4m(fh)


def mean_abs_diff(a: Plane, b: Plane) -> float:
    if a.shape != b.shape:
        raise ValueError(f"plane dimensions differ: {a.shape} vs {b.shape}")
    return float(np.abs(a.samples.astype(np.int16) - b.samples.astype(np.int16)).mean())


def stack(frames: Sequence[Plane]) -> np.ndarray:
    """Frames as a (n, h, w) float64 array."""
    return np.stack([f.samples for f in frames]).astype(np.float64)
