"""Differentiable wave-optics microscope simulation and calibration."""

__version__ = "0.1.0"

from .autodiff import Tape, TrainableParam, backward
from .blocks import (
    CameraBlock,
    LensBlock,
    MicroscopeModel,
    PhaseMaskBlock,
    PsfSource,
    WavePropagation,
    camera_forward,
    lens_forward,
    object_to_image_defocus,
    phase_mask_forward,
    wp_forward,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    ParameterError,
    SamplingError,
    ValidationError,
    WavecalError,
)
from .field import GridSpec, IntensityImage, SampledField
from .optim import AdamConfig, CalibrationResult, DepthStack, calibrate, nmse
from .psf import ObjectiveSpec, gen_ideal_psf

__all__ = [
    "AdamConfig",
    "CalibrationResult",
    "CameraBlock",
    "ConfigurationError",
    "DepthStack",
    "DivergenceError",
    "FormatError",
    "GridSpec",
    "IntensityImage",
    "LensBlock",
    "MicroscopeModel",
    "ObjectiveSpec",
    "ParameterError",
    "PhaseMaskBlock",
    "PsfSource",
    "SampledField",
    "SamplingError",
    "Tape",
    "TrainableParam",
    "ValidationError",
    "WavePropagation",
    "WavecalError",
    "backward",
    "calibrate",
    "camera_forward",
    "gen_ideal_psf",
    "lens_forward",
    "nmse",
    "object_to_image_defocus",
    "phase_mask_forward",
    "wp_forward",
]
