"""Sampled complex fields and the plain numeric kernels the optics blocks use.

Conventions used throughout the package:

* grids are square with an even side ``n``; sample ``(a, b)`` sits at the
  physical position ``((b - n/2) * pitch, (a - n/2) * pitch)``, i.e. the
  origin (and zero frequency) is the sample at index ``n // 2``;
* the forward DFT is unnormalized and the inverse carries ``1 / n**2``;
* every length is in micrometers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
from scipy import ndimage

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid with its physical pitch and wavelength (µm)."""

    n_side: int
    pitch_um: float
    wavelength_um: float

    def __post_init__(self) -> None:
        if int(self.n_side) != self.n_side or self.n_side < 8 or self.n_side % 2:
            raise DimensionError(f"n_side must be an even integer >= 8, got {self.n_side}")
        if not (np.isfinite(self.pitch_um) and self.pitch_um > 0):
            raise ParameterError(f"pitch_um must be positive, got {self.pitch_um}")
        if not (np.isfinite(self.wavelength_um) and self.wavelength_um > 0):
            raise ParameterError(f"wavelength_um must be positive, got {self.wavelength_um}")

    @property
    def k(self) -> float:
        """Wave number 2π/λ in rad/µm."""
        return 2 * np.pi / self.wavelength_um

    @property
    def extent_um(self) -> float:
        return self.n_side * self.pitch_um

    def with_pitch(self, pitch_um: float) -> GridSpec:
        return replace(self, pitch_um=float(pitch_um))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` coordinate arrays of shape ``(n, n)``."""
        return centered_coords(self.n_side, self.pitch_um)


def centered_coords(n: int, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    ax = (np.arange(n) - n // 2) * pitch
    y, x = np.meshgrid(ax, ax, indexing="ij")
    return x, y


@dataclass(frozen=True)
class SampledField:
    """Complex wavefront on a :class:`GridSpec`.

    ``values`` is normally a complex ndarray; inside a differentiable pipeline
    it may also be a :class:`wavecal.autodiff.Var` wrapping one.
    """

    grid: GridSpec
    values: object = field(repr=False)

    def __post_init__(self) -> None:
        shape = getattr(self.values, "shape", None)
        n = self.grid.n_side
        if shape != (n, n):
            raise DimensionError(f"field values have shape {shape}, grid expects {(n, n)}")

    def array(self) -> np.ndarray:
        v = self.values
        return np.asarray(getattr(v, "value", v))

    def total_power(self) -> float:
        return total_power(self.array(), self.grid.pitch_um)

    def irradiance(self) -> IntensityImage:
        return IntensityImage(self.grid, np.abs(self.array()) ** 2)


@dataclass(frozen=True)
class IntensityImage:
    """Non-negative real image on a :class:`GridSpec`."""

    grid: GridSpec
    values: object = field(repr=False)

    def __post_init__(self) -> None:
        shape = getattr(self.values, "shape", None)
        n = self.grid.n_side
        if shape != (n, n):
            raise DimensionError(f"image values have shape {shape}, grid expects {(n, n)}")

    def array(self) -> np.ndarray:
        v = self.values
        return np.asarray(getattr(v, "value", v))


def total_power(values: np.ndarray, pitch_um: float) -> float:
    return float(np.sum(np.abs(values) ** 2) * pitch_um**2)


def _check_square_even(f: np.ndarray) -> int:
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise DimensionError(f"expected a square 2D grid, got shape {f.shape}")
    n = f.shape[0]
    if n % 2:
        raise DimensionError(f"grid side must be even, got {n}")
    return n


def fft2_centered(f: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT with the origin at sample ``n // 2`` on both sides."""
    _check_square_even(f)
    return scipy.fft.fftshift(scipy.fft.fft2(scipy.fft.ifftshift(f)))


def ifft2_centered(f: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered` (carries the ``1/n**2`` factor)."""
    _check_square_even(f)
    return scipy.fft.fftshift(scipy.fft.ifft2(scipy.fft.ifftshift(f)))


def rfft2_centered(f: np.ndarray) -> np.ndarray:
    """Half-spectrum of a real grid; pairs with :func:`irfft2_centered`.

    The returned layout is only meaningful to :func:`irfft2_centered`; it is
    used for real convolutions where the full spectrum is never inspected.
    """
    _check_square_even(f)
    return scipy.fft.rfft2(scipy.fft.ifftshift(f))


def irfft2_centered(F: np.ndarray, n: int) -> np.ndarray:
    return scipy.fft.fftshift(scipy.fft.irfft2(F, s=(n, n)))


def pad_center(f: np.ndarray, new_side: int) -> np.ndarray:
    """Embed ``f`` in the middle of a zero grid of side ``new_side``."""
    n = _check_square_even(f)
    if new_side % 2:
        raise DimensionError(f"new_side must be even, got {new_side}")
    if new_side < n:
        raise DimensionError(f"cannot pad side {n} down to {new_side}")
    if new_side == n:
        return f.copy()
    off = (new_side - n) // 2
    out = np.zeros((new_side, new_side), dtype=f.dtype)
    out[off : off + n, off : off + n] = f
    return out


def crop_center(f: np.ndarray, new_side: int) -> np.ndarray:
    """Central ``new_side x new_side`` window; keeps the center sample."""
    n = _check_square_even(f)
    if new_side % 2:
        raise DimensionError(f"new_side must be even, got {new_side}")
    if new_side > n:
        raise DimensionError(f"cannot crop side {n} up to {new_side}")
    off = (n - new_side) // 2
    return f[off : off + new_side, off : off + new_side].copy()


def resample_bilinear(
    img: np.ndarray,
    scale_x: float,
    scale_y: float,
    shift_x_px: float,
    shift_y_px: float,
) -> np.ndarray:
    """Scale about the grid center, then translate, with bilinear interpolation.

    The output pixel at centered position ``(X, Y)`` reads the input at
    ``((X - shift_x) / scale_x, (Y - shift_y) / scale_y)``. Samples falling
    outside the input are zero.
    """
    n = _check_square_even(np.asarray(img))
    for name, s in (("scale_x", scale_x), ("scale_y", scale_y)):
        if not 0.5 < s < 2.0:
            raise ParameterError(f"{name}={s} outside the supported range (0.5, 2.0)")
    for name, s in (("shift_x_px", shift_x_px), ("shift_y_px", shift_y_px)):
        if abs(s) > n / 4:
            raise ParameterError(f"{name}={s} exceeds ±{n / 4} pixels")
    img = np.asarray(img, dtype=float)
    if scale_x == 1 and scale_y == 1 and shift_x_px == 0 and shift_y_px == 0:
        return img.copy()
    c = n // 2
    idx = np.arange(n) - c
    rows = (idx - shift_y_px) / scale_y + c
    cols = (idx - shift_x_px) / scale_x + c
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="grid-constant", cval=0.0)
