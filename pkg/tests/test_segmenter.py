import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shotrf.frameio import FrameSequence
from shotrf.segmenter import Segment, content_id, detect_shots, fnv1a64


def frames_of(values, shape=(4, 4)):
    return FrameSequence.from_arrays([np.full(shape, v, np.uint8) for v in values])


def assert_tiles(segs, n):
    assert segs[0].start_frame == 0
    assert segs[-1].end_frame == n
    for a, b in zip(segs, segs[1:]):
        assert a.end_frame == b.start_frame


def test_identical_frames_one_segment():
    segs = detect_shots(frames_of([40] * 30), 12.0)
    assert [(s.start_frame, s.end_frame) for s in segs] == [(0, 30)]


def test_black_then_white_cut_at_ten():
    segs = detect_shots(frames_of([0] * 10 + [255] * 10), 12.0, 2)
    assert [(s.start_frame, s.end_frame) for s in segs] == [(0, 10), (10, 20)]


def test_alternating_frames_respect_min_length():
    vals = [0, 255] * 20
    segs = detect_shots(frames_of(vals), 12.0, 5)
    assert_tiles(segs, 40)
    assert all(len(s) >= 5 for s in segs)
    assert len(segs) == 8


def test_short_tail_is_folded_into_previous_shot():
    segs = detect_shots(frames_of([0, 255] * 20 + [0]), 12.0, 5)
    assert_tiles(segs, 41)
    assert [len(s) for s in segs] == [5] * 7 + [6]


def test_default_min_shot_len_blocks_early_cut():
    segs = detect_shots(frames_of([0] * 10 + [255] * 10), 12.0)
    assert len(segs) == 1


def test_invalid_arguments():
    with pytest.raises(ValueError):
        detect_shots(frames_of([0, 0]), 0.0)
    with pytest.raises(ValueError):
        detect_shots(frames_of([0, 0]), 1.0, 0)
    with pytest.raises(ValueError):
        Segment(3, 3, "x")


def test_fnv1a64_reference_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_source_id_hashes_segment_luma():
    seq = frames_of([1, 2, 3])
    expected = fnv1a64(bytes([1] * 16 + [2] * 16))
    assert content_id(seq, 0, 2) == f"{expected:016x}"
    assert content_id(seq, 0, 2) != content_id(seq, 1, 3)
    segs = detect_shots(seq, 12.0, 1)
    assert segs[0].source_id == content_id(seq)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=40), st.integers(1, 8),
       st.floats(0.5, 100), st.floats(0.5, 100))
def test_tiling_and_threshold_monotonicity(values, min_len, t1, t2):
    seq = frames_of(values, (2, 2))
    lo, hi = sorted((t1, t2))
    a = detect_shots(seq, lo, min_len)
    b = detect_shots(seq, hi, min_len)
    for segs in (a, b):
        assert_tiles(segs, len(values))
        # a shorter segment is only possible when the whole video is shorter
        assert all(len(s) >= min_len for s in segs) or (len(segs) == 1 and len(values) < min_len)
    assert len(b) <= len(a)
