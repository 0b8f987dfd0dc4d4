"""Ideal bright-field PSF seeds from a circular pupil with a defocus phase.

This is the usual pupil-plane model, not a full scalar Debye integral: the
pupil is uniform inside the NA cut-off and carries the angular-spectrum
defocus phase ``exp(j k d sqrt(1 - (NA rho)**2))``. At NA 0.45 in air the
difference from the Debye result is small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SamplingError
from .field import GridSpec, SampledField, ifft2_centered


@dataclass(frozen=True)
class ObjectiveSpec:
    magnification: float = 20.0
    na: float = 0.45
    tube_length_um: float = 165000.0
    wavelength_um: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.na < 1:
            raise ParameterError(f"na must lie in (0, 1) for an air objective, got {self.na}")
        if not self.magnification > 0:
            raise ParameterError(f"magnification must be positive, got {self.magnification}")
        if not self.wavelength_um > 0:
            raise ParameterError(f"wavelength_um must be positive, got {self.wavelength_um}")
        if not self.tube_length_um > 0:
            raise ParameterError(f"tube_length_um must be positive, got {self.tube_length_um}")

    @property
    def focal_length_um(self) -> float:
        return self.tube_length_um / self.magnification

    def object_pitch(self, grid: GridSpec) -> float:
        """Pixel pitch of ``grid`` (image side) referred back to the sample."""
        return grid.pitch_um / self.magnification

    def nyquist_pitch(self) -> float:
        """Largest sample-side pitch that samples the irradiance band without aliasing."""
        return self.wavelength_um / (4 * self.na)


def pupil_function(spec: ObjectiveSpec, grid: GridSpec, defocus_um: float, spherical_waves: float = 0.0) -> np.ndarray:
    """Complex pupil on the frequency grid conjugate to ``grid`` (sample side).

    ``spherical_waves`` adds primary spherical aberration, the Zernike term
    ``6 rho**4 - 6 rho**2 + 1`` with that many waves of coefficient. Unlike
    defocus it is not odd under a change of focus direction, so it makes the
    through-focus stack asymmetric.
    """
    n = grid.n_side
    dxo = spec.object_pitch(grid)
    df = 1.0 / (n * dxo)
    fx = (np.arange(n) - n // 2) * df
    FY, FX = np.meshgrid(fx, fx, indexing="ij")
    sin_t = spec.wavelength_um * np.sqrt(FX**2 + FY**2)
    inside = sin_t <= spec.na
    k = 2 * np.pi / spec.wavelength_um
    cos_t = np.sqrt(np.clip(1.0 - sin_t**2, 0.0, None))
    rho2 = (sin_t / spec.na) ** 2
    phase = k * defocus_um * cos_t + 2 * np.pi * spherical_waves * (6 * rho2**2 - 6 * rho2 + 1)
    return np.where(inside, np.exp(1j * phase), 0.0)


def gen_ideal_psf(
    spec: ObjectiveSpec, grid: GridSpec, defocus_um: float = 0.0, spherical_waves: float = 0.0
) -> SampledField:
    """Complex image-plane field of a point source defocused by ``defocus_um``.

    ``grid`` describes the camera side; its pitch divided by the magnification
    must satisfy the irradiance Nyquist limit ``λ / (4 NA)``. The amplitude is
    scaled so the unaberrated in-focus peak equals 1; total power does not depend on the
    defocus.
    """
    if not np.isclose(grid.wavelength_um, spec.wavelength_um, rtol=1e-12):
        raise ParameterError(
            f"grid wavelength {grid.wavelength_um} differs from objective wavelength {spec.wavelength_um}"
        )
    dxo = spec.object_pitch(grid)
    if dxo > spec.nyquist_pitch() * (1 + 1e-12):
        raise SamplingError(
            f"sample-side pitch {dxo:.4g} µm exceeds the Nyquist limit λ/(4NA) = {spec.nyquist_pitch():.4g} µm"
        )
    pupil = pupil_function(spec, grid, defocus_um, spherical_waves)
    n_in = np.count_nonzero(pupil)
    if n_in < 4:
        raise SamplingError("pupil is sampled by fewer than 4 frequency samples; enlarge the grid")
    u = ifft2_centered(pupil) * (grid.n_side**2 / n_in)
    return SampledField(grid, u)
