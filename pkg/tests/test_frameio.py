import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shotrf.frameio import FrameSequence, Plane, Y4MError, mean_abs_diff, read_y4m, write_y4m


def test_minimal_stream_keeps_first_four_bytes_as_luma():
    raw = b"YUV4MPEG2 W2 H2 F25:1 C420\nFRAME\n" + bytes([1, 2, 3, 4, 200, 201])
    seq = read_y4m(raw)
    assert len(seq) == 1
    assert seq[0].samples.tolist() == [[1, 2], [3, 4]]
    assert seq.frame_rate == 25


def test_three_frame_markers_give_three_frames():
    payload = b"FRAME\n" + bytes(6)
    seq = read_y4m(b"YUV4MPEG2 W2 H2 F30000:1001 C420jpeg\n" + payload * 3)
    assert len(seq) == 3
    assert seq.frame_rate.numerator == 30000


@pytest.mark.parametrize("header, token", [
    (b"YUV4MPEG2 W0 H2 C420\n", "W0"),
    (b"YUV4MPEG2 W2 H-1 C420\n", "H-1"),
    (b"YUV4MPEG2 Wx H2 C420\n", "Wx"),
    (b"YUV4MPEG2 W2 H2 F25:0 C420\n", "F25:0"),
    (b"YUV4MPEG2 W2 H2 C444\n", "C444"),
])
def test_bad_header_names_offending_token(header, token):
    with pytest.raises(Y4MError, match=token):
        read_y4m(header + b"FRAME\n" + bytes(12))


def test_bad_signature():
    with pytest.raises(Y4MError, match="signature"):
        read_y4m(b"YUV4MPEG W2 H2\nFRAME\n" + bytes(6))


def test_truncated_payload_reports_frame_index():
    raw = b"YUV4MPEG2 W2 H2 C420\n" + b"FRAME\n" + bytes(6) + b"FRAME\n" + bytes(3)
    with pytest.raises(Y4MError, match="frame 1"):
        read_y4m(raw)
    raw = b"YUV4MPEG2 W2 H2 C420\n" + b"FRAME\n" + bytes(5)
    with pytest.raises(Y4MError, match="chroma payload in frame 0"):
        read_y4m(raw)


def test_frame_parameters_after_marker_are_ignored():
    raw = b"YUV4MPEG2 W1 H1 Cmono\nFRAME Ixyz\n\x07"
    assert read_y4m(raw)[0].samples.item() == 7


def test_odd_dimensions_skip_rounded_up_chroma():
    # 3x3 luma -> two 2x2 chroma planes
    frame = b"FRAME\n" + bytes(range(9)) + bytes(8)
    seq = read_y4m(b"YUV4MPEG2 W3 H3 C420\n" + frame * 2)
    assert len(seq) == 2
    assert seq[1].samples.ravel().tolist() == list(range(9))


def test_luma_only_storage():
    seq = read_y4m(b"YUV4MPEG2 W4 H2 C420\nFRAME\n" + bytes(range(12)))
    assert seq[0].samples.size == 4 * 2
    assert seq[0].samples.base is None or seq[0].samples.nbytes == 8


def test_planes_are_immutable():
    p = Plane.from_array(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        p.samples[0, 0] = 1


def test_sequence_rejects_mixed_dimensions():
    with pytest.raises(ValueError, match="frame 1"):
        FrameSequence((Plane.from_array(np.zeros((2, 2))), Plane.from_array(np.zeros((2, 3)))))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 9), st.integers(1, 9), st.integers(1, 4), st.booleans(), st.integers(0, 2**32 - 1)
)
def test_y4m_round_trip_is_bit_exact(w, h, n, mono, seed):
    rng = np.random.default_rng(seed)
    seq = FrameSequence.from_arrays([rng.integers(0, 256, (h, w), dtype=np.uint8) for _ in range(n)])
    back = read_y4m(write_y4m(seq, mono=mono))
    assert len(back) == n
    for a, b in zip(seq, back):
        assert np.array_equal(a.samples, b.samples)


def test_write_to_stream():
    seq = FrameSequence.from_arrays([np.full((2, 2), 9, np.uint8)])
    buf = io.BytesIO()
    assert write_y4m(seq, buf) is None
    assert read_y4m(buf.getvalue())[0].samples.tolist() == [[9, 9], [9, 9]]


def test_mean_abs_diff_examples():
    z = Plane.from_array(np.zeros((2, 2), np.uint8))
    assert mean_abs_diff(z, z) == 0.0
    assert mean_abs_diff(z, Plane.from_array(np.full((2, 2), 255, np.uint8))) == 255.0
    b = Plane.from_array(np.array([[10, 0], [0, 0]], np.uint8))
    assert mean_abs_diff(z, b) == 2.5


def test_mean_abs_diff_dimension_mismatch():
    with pytest.raises(ValueError):
        mean_abs_diff(Plane.from_array(np.zeros((2, 2))), Plane.from_array(np.zeros((3, 2))))


@given(arrays(np.uint8, (3, 4)), arrays(np.uint8, (3, 4)))
def test_mean_abs_diff_range_and_symmetry(a, b):
    pa, pb = Plane.from_array(a), Plane.from_array(b)
    d = mean_abs_diff(pa, pb)
    assert 0.0 <= d <= 255.0
    assert d == mean_abs_diff(pb, pa)


def test_plane_value_equality():
    a = Plane.from_array(np.zeros((2, 3)))
    assert a == Plane.from_array(np.zeros((2, 3), dtype=np.uint8))
    assert a != Plane.from_array(np.ones((2, 3)))
    assert a != Plane.from_array(np.zeros((3, 2)))
    assert len({a, Plane.from_array(np.zeros((2, 3)))}) == 1
