"""Procedural resolution targets and synthetic phase-mask families."""

from __future__ import annotations

import numpy as np


def _bar_group(w: int, horizontal: bool) -> np.ndarray:
    """Three bars of width ``w`` and length ``5 w`` separated by ``w``."""
    g = np.zeros((5 * w, 5 * w))
    for i in range(3):
        g[:, 2 * i * w : (2 * i + 1) * w] = 1.0
    return g.T if horizontal else g


def usaf_target(n: int = 256, seed: int = 0) -> np.ndarray:
    """Binary three-bar target with groups at decreasing scales.

    Each element holds a vertical and a horizontal three-bar group. Elements
    are packed on a spiral-free row layout from coarse to fine; ``seed``
    jitters the placement by a few pixels so different seeds give distinct
    but statistically equivalent targets.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((n, n))
    widths = [w for w in (12, 9, 7, 5, 4, 3, 2) if 11 * w + 4 <= n]
    margin = max(2, n // 32)
    x, y, row_h = margin, margin, 0
    for w in widths:
        for horizontal in (False, True):
            g = _bar_group(w, horizontal)
            h = g.shape[0]
            if x + h + margin > n:
                x, y, row_h = margin, y + row_h + 2 * w, 0
            if y + h + margin > n:
                break
            jx, jy = rng.integers(0, max(1, w // 2) + 1, size=2)
            xx, yy = min(x + jx, n - h), min(y + jy, n - h)
            img[yy : yy + h, xx : xx + h] = np.maximum(img[yy : yy + h, xx : xx + h], g)
            x += h + 2 * w
            row_h = max(row_h, h + jy)
    # a square pad with a known edge for low-frequency content
    s = n // 8
    img[n - margin - s : n - margin, n - margin - s : n - margin] = 1.0
    return img


def _norm_coords(n: int, radius_px: float, scale: float, shift_x: float, shift_y: float):
    ax = (np.arange(n) - n // 2) / radius_px
    y, x = np.meshgrid(ax, ax, indexing="ij")
    return (x - shift_x) / scale, (y - shift_y) / scale


def cubic_mask(
    n: int,
    peak_phase: float,
    radius_px: float | None = None,
    scale: float = 1.0,
    shift_x: float = 0.0,
    shift_y: float = 0.0,
) -> np.ndarray:
    """``alpha (x**3 + y**3)`` offset to span ``[0, peak_phase]`` over the disk.

    Coordinates are normalized so the disk of ``radius_px`` (default: the
    grid half-width) has unit radius; values outside it are clipped to the
    same range, so the mask never leaves ``[0, peak_phase]``.
    """
    r = radius_px or n / 2
    x, y = _norm_coords(n, r, scale, shift_x, shift_y)
    p = x**3 + y**3
    ax = np.arange(n) - n // 2
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    disk = xx**2 + yy**2 <= r * r
    lo, hi = p[disk].min(), p[disk].max()
    return np.clip(peak_phase * (p - lo) / (hi - lo), 0.0, peak_phase)


def circular_gradient_mask(
    n: int,
    peak_phase: float,
    radius: float,
    radius_px: float | None = None,
    shift_x: float = 0.0,
    shift_y: float = 0.0,
) -> np.ndarray:
    """Cone ``A * max(0, 1 - rho / R)`` peaking at the (shifted) center.

    ``radius`` and the shifts are in units of ``radius_px`` (default: the
    grid half-width).
    """
    x, y = _norm_coords(n, radius_px or n / 2, 1.0, shift_x, shift_y)
    rho = np.hypot(x, y)
    return peak_phase * np.clip(1.0 - rho / radius, 0.0, None)
