import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavecal.errors import FormatError
from wavecal.io import (
    decode_pfm,
    encode_pfm,
    read_complex_pfm,
    read_pfm,
    write_complex_pfm,
    write_csv,
    write_json,
    write_pfm,
    write_pgm,
)

finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


def square_grids():
    return st.integers(1, 24).flatmap(lambda n: arrays(np.float32, (n, n), elements=finite32))


@settings(max_examples=1000, deadline=None)
@given(square_grids())
def test_round_trip_is_lossless(a):
    b = decode_pfm(encode_pfm(a))
    assert b.dtype == np.float32
    np.testing.assert_array_equal(b.view(np.uint32), a.view(np.uint32))


def test_file_round_trip(tmp_path, rng):
    a = rng.normal(size=(64, 64)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", a)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), a)


def test_reference_layout():
    vals = np.arange(64 * 64, dtype="<f4")
    buf = b"Pf\n64 64\n-1.0\n" + vals.tobytes()
    a = decode_pfm(buf)
    assert a.shape == (64, 64)
    # rows are stored bottom to top
    np.testing.assert_array_equal(a[-1], vals[:64])
    np.testing.assert_array_equal(a[0], vals[-64:])


def test_encoded_header():
    buf = encode_pfm(np.zeros((2, 2), np.float32))
    assert buf.startswith(b"Pf\n2 2\n-1.0\n")
    assert len(buf) == len(b"Pf\n2 2\n-1.0\n") + 16


def test_complex_pair(tmp_path, rng):
    z = (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))).astype(np.complex64)
    re_p, im_p = write_complex_pfm(tmp_path / "field", z)
    assert re_p.name == "field.re.pfm" and im_p.name == "field.im.pfm"
    np.testing.assert_array_equal(read_complex_pfm(tmp_path / "field"), z)


PAYLOAD4 = np.zeros(4, "<f4").tobytes()
MALFORMED = {
    "bad magic": (b"P6\n2 2\n-1.0\n" + PAYLOAD4, 0),
    "color variant": (b"PF\n2 2\n-1.0\n" + PAYLOAD4 * 3, 0),
    "missing width": (b"Pf\n\n", 4),
    "non-numeric height": (b"Pf\n2 x\n-1.0\n" + PAYLOAD4, 5),
    "non-square": (b"Pf\n2 3\n-1.0\n" + np.zeros(6, "<f4").tobytes(), 5),
    "big-endian scale": (b"Pf\n2 2\n1.0\n" + PAYLOAD4, 7),
    "zero scale": (b"Pf\n2 2\n0.0\n" + PAYLOAD4, 7),
    "truncated payload": (b"Pf\n2 2\n-1.0\n" + PAYLOAD4[:10], 22),
    "trailing bytes": (b"Pf\n2 2\n-1.0\n" + PAYLOAD4 + b"\x00", 28),
    "nan payload": (b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 0, 0, float("nan"), 0), 20),
    "inf payload": (b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", float("inf"), 0, 0, 0), 12),
    "empty": (b"", 0),
}


@pytest.mark.parametrize("name", sorted(MALFORMED))
def test_malformed_inputs_rejected_with_offset(name):
    buf, offset = MALFORMED[name]
    with pytest.raises(FormatError) as exc:
        decode_pfm(buf)
    assert exc.value.offset == offset
    assert f"byte offset {offset}" in str(exc.value)


def test_writer_rejects_bad_grids():
    with pytest.raises(FormatError):
        encode_pfm(np.zeros((2, 3)))
    with pytest.raises(FormatError):
        encode_pfm(np.array([[np.nan]]))
    with pytest.raises(FormatError):
        encode_pfm(np.zeros((2, 2), complex))


def test_pgm_is_max_normalized(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.array([[0.0, 1.0], [2.0, 4.0]]))
    data = (tmp_path / "a.pgm").read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert list(data[-4:]) == [0, 64, 128, 255]


def test_csv_and_json(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.1), (2, 1e-20)])
    assert (tmp_path / "t.csv").read_text() == "a,b\n1,0.1\n2,1e-20\n"
    write_json(tmp_path / "t.json", {"x": np.float64(1.5), "y": np.arange(2)})
    assert '"x": 1.5' in (tmp_path / "t.json").read_text()
