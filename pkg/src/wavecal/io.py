"""Artifact formats: PFM fields, PGM heatmaps, CSV tables and JSON documents.

PFM layout (grayscale only)::

    Pf\\n<width> <height>\\n-1.0\\n<width*height little-endian float32, bottom row first>

Complex grids are stored as a pair of files with ``.re.pfm`` and ``.im.pfm``
suffixes.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

_WS = b" \t\r\n"
_INT = re.compile(rb"[0-9]+")
_FLOAT = re.compile(rb"[-+]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?")


def _skip_ws(buf: bytes, pos: int, required: bool) -> int:
    start = pos
    while pos < len(buf) and buf[pos] in _WS:
        pos += 1
    if required and pos == start:
        raise FormatError("expected whitespace in PFM header", pos)
    return pos


def _token(buf: bytes, pos: int, pattern: re.Pattern, what: str) -> tuple[bytes, int]:
    m = pattern.match(buf, pos)
    if m is None or m.end() == pos:
        raise FormatError(f"expected {what} in PFM header", pos)
    end = m.end()
    if end < len(buf) and buf[end] not in _WS:
        raise FormatError(f"malformed {what} in PFM header", end)
    return m.group(0), end


def decode_pfm(buf: bytes) -> np.ndarray:
    """Parse an in-memory grayscale PFM into a float32 array (top row first)."""
    if buf[:2] == b"PF":
        raise FormatError("color PFM ('PF') is not supported; expected grayscale 'Pf'", 0)
    if buf[:2] != b"Pf":
        raise FormatError("bad PFM magic, expected 'Pf'", 0)
    pos = _skip_ws(buf, 2, required=True)
    w_tok, pos = _token(buf, pos, _INT, "width")
    pos = _skip_ws(buf, pos, required=True)
    h_pos = pos
    h_tok, pos = _token(buf, pos, _INT, "height")
    width, height = int(w_tok), int(h_tok)
    if width == 0 or height == 0:
        raise FormatError("PFM dimensions must be positive", h_pos)
    if width != height:
        raise FormatError(f"PFM grid must be square, got {width}x{height}", h_pos)
    pos = _skip_ws(buf, pos, required=True)
    s_pos = pos
    s_tok, pos = _token(buf, pos, _FLOAT, "scale")
    scale = float(s_tok)
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM scale must be a finite non-zero number", s_pos)
    if scale > 0:
        raise FormatError("big-endian PFM (positive scale) is not supported", s_pos)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise FormatError("missing separator after PFM scale", pos)
    pos += 1
    need = 4 * width * height
    payload = buf[pos:]
    if len(payload) < need:
        raise FormatError(f"truncated PFM payload: need {need} bytes, found {len(payload)}", len(buf))
    if len(payload) > need:
        raise FormatError("unexpected trailing bytes after PFM payload", pos + need)
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError("non-finite value in PFM payload", pos + 4 * int(bad[0]))
    return np.flipud(data).astype(np.float32)


def encode_pfm(a: np.ndarray) -> bytes:
    """Serialize a square, finite real grid as grayscale little-endian PFM."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FormatError(f"PFM grids must be square 2D arrays, got shape {a.shape}", 0)
    if np.iscomplexobj(a):
        raise FormatError("complex grid: use write_complex_pfm", 0)
    f = a.astype("<f4")
    if not np.all(np.isfinite(f)):
        raise FormatError("cannot store non-finite values in PFM", 0)
    header = f"Pf\n{a.shape[1]} {a.shape[0]}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(np.flipud(f)).tobytes()


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def write_pfm(path, a: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(a))


def _complex_paths(stem) -> tuple[Path, Path]:
    s = str(stem)
    for suffix in (".re.pfm", ".im.pfm", ".pfm"):
        if s.endswith(suffix):
            s = s[: -len(suffix)]
            break
    return Path(s + ".re.pfm"), Path(s + ".im.pfm")


def write_complex_pfm(stem, z: np.ndarray) -> tuple[Path, Path]:
    """Write ``z`` as ``<stem>.re.pfm`` and ``<stem>.im.pfm``."""
    re_p, im_p = _complex_paths(stem)
    z = np.asarray(z)
    write_pfm(re_p, z.real)
    write_pfm(im_p, z.imag)
    return re_p, im_p


def read_complex_pfm(stem) -> np.ndarray:
    re_p, im_p = _complex_paths(stem)
    re_a, im_a = read_pfm(re_p), read_pfm(im_p)
    if re_a.shape != im_a.shape:
        raise FormatError(f"real/imaginary shape mismatch {re_a.shape} vs {im_a.shape}", 0)
    return re_a.astype(np.complex64) + 1j * im_a.astype(np.complex64)


def write_pgm(path, a: np.ndarray) -> None:
    """8-bit binary PGM, scaled so the maximum maps to 255 (negatives clip to 0)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise FormatError(f"PGM needs a 2D array, got shape {a.shape}", 0)
    top = float(np.nanmax(a)) if a.size else 0.0
    scaled = np.zeros(a.shape) if top <= 0 else np.clip(a / top, 0, 1) * 255
    img = np.nan_to_num(np.rint(scaled)).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
