"""Differentiable optical elements and their composition into a microscope.

Each block maps a :class:`SampledField` to a new one (the camera maps it to an
:class:`IntensityImage`). Field values may be plain ndarrays or autodiff
``Var`` objects; in the latter case the computation is recorded on the tape.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ConvOperand, Tape, TrainableParam
from .errors import ConfigurationError, DimensionError, ParameterError, SamplingError
from .field import GridSpec, IntensityImage, SampledField, centered_coords, fft2_centered

MIN_WP_DISTANCE_UM = 200.0


def object_to_image_defocus(depth_um: float, magnification: float) -> float:
    """Object-space axial offset to image-space offset (longitudinal magnification M**2)."""
    return float(depth_um) * magnification**2


# ---------------------------------------------------------- wave propagation


def _check_wp_distance(z_um: float) -> None:
    if not np.isfinite(z_um):
        raise SamplingError(f"propagation distance must be finite, got {z_um}")
    if z_um != 0 and abs(z_um) < MIN_WP_DISTANCE_UM:
        raise SamplingError(
            f"propagation distance {z_um} µm is below the minimum distance of "
            f"{MIN_WP_DISTANCE_UM:g} µm supported by the impulse-response propagator"
        )


@lru_cache(maxsize=96)
def rs_transfer_function(n_pad: int, pitch_um: float, wavelength_um: float, z_um: float) -> np.ndarray:
    """Sampled Rayleigh-Sommerfeld impulse response, transformed and scaled by pitch**2.

    The impulse response ``h = z / (j λ) * exp(j k r) / r**2`` is sampled on
    the ``n_pad`` grid. Negative ``z`` uses ``conj(h(|z|))`` (back-propagation).
    """
    z = abs(z_um)
    k = 2 * np.pi / wavelength_um
    x, y = centered_coords(n_pad, pitch_um)
    r2 = z * z + x * x + y * y
    h = (z / (1j * wavelength_um)) * np.exp(1j * k * np.sqrt(r2)) / r2
    if z_um < 0:
        h = np.conj(h)
    H = fft2_centered(h) * pitch_um**2
    H.setflags(write=False)
    return H


def wp_forward(u1: SampledField, z_um: float) -> SampledField:
    """Propagate ``u1`` by ``z_um`` through a homogeneous medium.

    Linear convolution with the sampled impulse response: the field is zero
    padded to twice its side, multiplied in the frequency domain and cropped.
    """
    _check_wp_distance(z_um)
    if z_um == 0:
        return u1
    g = u1.grid
    n = g.n_side
    H = rs_transfer_function(2 * n, float(g.pitch_um), float(g.wavelength_um), float(z_um))
    U = ad.fft2(ad.pad(u1.values, 2 * n))
    out = ad.crop(ad.ifft2(ad.cmul(U, H)), n)
    return SampledField(g, out)


# ---------------------------------------------------------------------- lens


def lens_output_pitch(grid: GridSpec, focal_length_um: float) -> float:
    return grid.wavelength_um * focal_length_um / (grid.n_side * grid.pitch_um)


def lens_forward(u1: SampledField, lens: LensBlock) -> SampledField:
    """Scaled Fourier transform onto the back focal plane.

    ``U2 = c(x, y) * F{U1 * P} * dx1**2`` with
    ``c = exp(j k f) / (j λ f) * exp(j k (x**2 + y**2) / (2 f))`` evaluated on
    the output grid, whose pitch becomes ``λ f / (n dx1)``. With
    ``front_focal=True`` the input plane is taken to be the front focal plane
    and the quadratic factor drops out (constant prefactor kept).
    """
    g = u1.grid
    f = lens.focal_length_um
    dx2 = lens_output_pitch(g, f)
    if not (np.isfinite(dx2) and dx2 > 0):
        raise ConfigurationError(f"lens output pitch {dx2} is not a positive finite number")
    out_grid = g.with_pitch(dx2)

    x1, y1 = g.coords()
    pupil = (x1 * x1 + y1 * y1) <= lens.pupil_radius_um**2
    v = u1.values if pupil.all() else ad.cmul(u1.values, pupil.astype(float))

    k = g.k
    c = np.exp(1j * k * f) / (1j * g.wavelength_um * f) * g.pitch_um**2
    if lens.front_focal:
        out = ad.cmul(ad.fft2(v), np.complex128(c))
    else:
        x2, y2 = out_grid.coords()
        c = c * np.exp(1j * k / (2 * f) * (x2 * x2 + y2 * y2))
        out = ad.cmul(ad.fft2(v), c)
    return SampledField(out_grid, out)


# ---------------------------------------------------------------- phase mask


def phase_mask_forward(u1: SampledField, phi) -> SampledField:
    """``U2 = U1 * exp(j phi)``; ``phi`` is a real grid or a Var."""
    n = u1.grid.n_side
    if np.shape(ad.value_of(phi)) != (n, n):
        raise DimensionError(f"phase grid shape {np.shape(ad.value_of(phi))} does not match field {(n, n)}")
    return SampledField(u1.grid, ad.cmul(u1.values, ad.cexp_j(phi)))


# -------------------------------------------------------------------- camera


def camera_forward(u: SampledField, o=None, gain=None) -> IntensityImage:
    """Irradiance ``|U|**2``; with an object, the unit-sum PSF convolved with it.

    ``o`` may be an :class:`IntensityImage`, an ndarray or a prepared
    :class:`ConvOperand`. ``gain`` optionally scales the synthesized image.
    """
    H = ad.abs2(u.values)
    if o is None:
        return IntensityImage(u.grid, H)
    if isinstance(o, IntensityImage):
        if o.grid.n_side != u.grid.n_side:
            raise DimensionError("object and field grids differ")
        o = o.array()
    img = ad.conv2_fft(ad.normalize_sum(H), o)
    if gain is not None:
        img = ad.cmul(img, gain)
    return IntensityImage(u.grid, img)


# -------------------------------------------------------------------- blocks


@dataclass
class PsfSource:
    """Source-plane field; trainable when ``param`` names a registry entry."""

    field0: np.ndarray
    param: str | None = None
    kind = "psf_source"

    def __post_init__(self) -> None:
        self.field0 = np.asarray(self.field0, dtype=complex)


@dataclass
class WavePropagation:
    distance_um: float = 0.0
    kind = "wp"

    def __post_init__(self) -> None:
        _check_wp_distance(self.distance_um)


@dataclass
class LensBlock:
    focal_length_um: float
    pupil_radius_um: float
    front_focal: bool = False
    kind = "lens"

    def __post_init__(self) -> None:
        if not self.focal_length_um > 0:
            raise ParameterError(f"focal_length_um must be positive, got {self.focal_length_um}")
        if not self.pupil_radius_um > 0:
            raise ParameterError(f"pupil_radius_um must be positive, got {self.pupil_radius_um}")


@dataclass
class PhaseMaskBlock:
    phi: np.ndarray
    param: str | None = None
    phase_only: bool = True
    kind = "phase_mask"

    def __post_init__(self) -> None:
        self.phi = np.asarray(self.phi, dtype=float)
        if not np.all(np.isfinite(self.phi)):
            raise ParameterError("phase mask contains non-finite values")
        if not self.phase_only:
            raise ConfigurationError("only phase-only masks are supported")


@dataclass
class CameraBlock:
    kind = "camera"


Block = PsfSource | WavePropagation | LensBlock | PhaseMaskBlock | CameraBlock


@dataclass
class MicroscopeModel:
    """Ordered block stack plus the registry of trainable parameters.

    ``magnification`` is the lateral magnification used to turn object-space
    depths into image-space propagation distances for the first WP block.
    """

    grid: GridSpec
    blocks: list
    params: dict[str, TrainableParam] = field(default_factory=dict)
    magnification: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.params, (list, tuple)):
            self.params = {p.name: p for p in self.params}
        self.validate()

    def validate(self) -> None:
        b = self.blocks
        if not b or not isinstance(b[0], PsfSource):
            raise ConfigurationError("the first block must be a psf_source")
        if not isinstance(b[-1], CameraBlock):
            raise ConfigurationError("the last block must be a camera")
        if any(isinstance(x, (PsfSource, CameraBlock)) for x in b[1:-1]):
            raise ConfigurationError("psf_source and camera may only appear at the ends")
        n = self.grid.n_side
        if b[0].field0.shape != (n, n):
            raise DimensionError(f"psf_source field has shape {b[0].field0.shape}, grid is {(n, n)}")

        refs: dict[str, int] = {}
        for blk in b:
            name = getattr(blk, "param", None)
            if name is not None:
                if name not in self.params:
                    raise ConfigurationError(f"block references unknown parameter {name!r}")
                refs[name] = refs.get(name, 0) + 1
        for name in self.params:
            if refs.get(name, 0) != 1:
                raise ConfigurationError(f"parameter {name!r} must be referenced by exactly one block")

        lenses = [blk for blk in b if isinstance(blk, LensBlock)]
        if len(lenses) % 2:
            raise ConfigurationError("lenses must come in 4-f pairs so the camera sees the source pitch")
        for l1, l2 in zip(lenses[::2], lenses[1::2]):
            if l1.focal_length_um != l2.focal_length_um:
                raise ConfigurationError(
                    f"4-f lens pair focal lengths differ ({l1.focal_length_um} vs {l2.focal_length_um}); "
                    "the second lens would not restore the source pitch"
                )

        grid = self.grid
        for blk in b:
            if isinstance(blk, PhaseMaskBlock) and blk.phi.shape != (n, n):
                raise DimensionError(f"phase mask shape {blk.phi.shape} does not match grid {(n, n)}")
            if isinstance(blk, LensBlock):
                grid = grid.with_pitch(lens_output_pitch(grid, blk.focal_length_um))
        if not np.isclose(grid.pitch_um, self.grid.pitch_um, rtol=1e-12):
            raise ConfigurationError("camera plane pitch differs from the source pitch")

    @property
    def trainable(self) -> list[str]:
        return list(self.params)

    def clone(self) -> MicroscopeModel:
        return copy.deepcopy(self)

    def plane_grids(self) -> list[GridSpec]:
        """Grid seen at the input of each block."""
        grids, g = [], self.grid
        for blk in self.blocks:
            grids.append(g)
            if isinstance(blk, LensBlock):
                g = g.with_pitch(lens_output_pitch(g, blk.focal_length_um))
        return grids

    def image_distance(self, depth_um: float, base_um: float) -> float:
        return base_um + object_to_image_defocus(depth_um, self.magnification)

    def _bind(self, tape: Tape | None) -> dict:
        if tape is None:
            return {k: p.values for k, p in self.params.items()}
        return {k: tape.watch(p) for k, p in self.params.items()}

    def source_field(self, bound: dict) -> SampledField:
        src = self.blocks[0]
        if src.param is None:
            return SampledField(self.grid, src.field0)
        return SampledField(self.grid, ad.as_complex(bound[src.param]))

    def forward(
        self,
        objects,
        depths_um: Sequence[float],
        tape: Tape | None = None,
        gain=None,
    ) -> list[IntensityImage]:
        """Synthesize one image per depth (depths in object space, µm).

        ``objects`` is a single object (shared) or one per depth; ``None``
        returns the camera-plane PSFs instead.
        """
        depths = list(depths_um)
        if isinstance(objects, (list, tuple)):
            if len(objects) != len(depths):
                raise DimensionError(f"{len(objects)} objects for {len(depths)} depths")
            objs = [_as_operand(o) for o in objects]
        else:
            objs = [_as_operand(objects)] * len(depths)

        has_wp = any(isinstance(blk, WavePropagation) for blk in self.blocks)
        if not has_wp and any(d != 0 for d in depths):
            raise ConfigurationError("nonzero depths need a wp block to defocus the source")

        bound = self._bind(tape)
        src = self.source_field(bound)
        images = []
        for d, o in zip(depths, objs):
            u = src
            first_wp = True
            for blk in self.blocks[1:-1]:
                if isinstance(blk, WavePropagation):
                    z = self.image_distance(d, blk.distance_um) if first_wp else blk.distance_um
                    first_wp = False
                    u = wp_forward(u, z)
                elif isinstance(blk, LensBlock):
                    u = lens_forward(u, blk)
                elif isinstance(blk, PhaseMaskBlock):
                    phi = bound[blk.param] if blk.param is not None else blk.phi
                    u = phase_mask_forward(u, phi)
            images.append(camera_forward(u, o, gain=gain))
        return images


def _as_operand(o):
    if o is None or isinstance(o, ConvOperand):
        return o
    if isinstance(o, IntensityImage):
        o = o.array()
    return ConvOperand(o)


def model_forward(model: MicroscopeModel, objects, depths_um, tape: Tape | None = None, gain=None):
    return model.forward(objects, depths_um, tape=tape, gain=gain)
