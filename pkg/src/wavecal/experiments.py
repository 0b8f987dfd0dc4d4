"""Synthetic calibration studies: PSF recovery, phase-mask recovery, depth prediction."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import TrainableParam
from .blocks import (
    CameraBlock,
    LensBlock,
    MicroscopeModel,
    PhaseMaskBlock,
    PsfSource,
    WavePropagation,
    lens_output_pitch,
    wp_forward,
)
from .errors import DivergenceError, ParameterError
from .field import GridSpec, IntensityImage, SampledField, resample_bilinear
from .optim import AdamConfig, DepthStack, calibrate, nmse
from .psf import ObjectiveSpec, gen_ideal_psf
from .targets import circular_gradient_mask, cubic_mask, usaf_target

log = logging.getLogger(__name__)

__all__ = [
    "DepthStack",
    "ExperimentSettings",
    "PerturbationSpec",
    "TrialReport",
    "add_noise",
    "aggregate",
    "make_ground_truth_psf",
    "predict_depth",
    "run_depth_evaluation",
    "run_pm_recovery",
    "run_psf_recovery",
    "trial_seed",
]

PEAK_PHASE_LIMIT = 5 * np.pi


@dataclass
class ExperimentSettings:
    """Optical set-up and protocol shared by the synthetic studies.

    The defaults describe the bench: 20x/0.45 objective with a 165 mm tube
    lens, 6.9 µm camera pixels, 150 mm relay lenses of 50.8 mm aperture.
    """

    n_side: int = 256
    pitch_um: float = 6.9
    wavelength_um: float = 0.633
    magnification: float = 20.0
    na: float = 0.45
    tube_length_um: float = 165000.0
    relay_focal_um: float = 150000.0
    relay_pupil_radius_um: float = 25400.0
    depths_um: tuple[float, ...] = (-50.0, 0.0, 50.0)
    noise_sigma_rel: float = 0.0
    target_seed: int = 0
    psf_adam: AdamConfig = field(
        default_factory=lambda: AdamConfig(lr=1e-2, field_lr=1e-2, max_iters=400, plateau_patience=40, plateau_tol=1e-4)
    )
    pm_adam: AdamConfig = field(
        default_factory=lambda: AdamConfig(lr=0.1, max_iters=200, plateau_patience=40, plateau_tol=1e-4)
    )
    pm_bounds: bool = False
    depth_gt_spherical_waves: float = 0.25

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n_side, self.pitch_um, self.wavelength_um)

    @property
    def objective(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.magnification, self.na, self.tube_length_um, self.wavelength_um)

    def target(self) -> IntensityImage:
        return IntensityImage(self.grid, usaf_target(self.n_side, self.target_seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths_um"] = list(self.depths_um)
        return d


@dataclass
class PerturbationSpec:
    """Random transform applied to the ideal PSF to build a ground truth.

    Shifts are uniform in ``±shift_px``, per-axis scales uniform in
    ``1 ± scale_delta`` and the defocus magnitude uniform in
    ``[defocus_min_um, defocus_max_um]`` (image space) with a random sign.
    """

    seed: int = 0
    shift_px: float = 20.0
    scale_delta: float = 0.3
    defocus_min_um: float = 200.0
    defocus_max_um: float = 1000.0
    random_sign: bool = True

    def __post_init__(self) -> None:
        if self.defocus_min_um < 200.0 or self.defocus_max_um < self.defocus_min_um:
            raise ParameterError("defocus range must satisfy 200 <= min <= max (µm)")
        if self.shift_px < 0 or not 0 <= self.scale_delta < 0.5:
            raise ParameterError("shift_px must be >= 0 and scale_delta in [0, 0.5)")

    def sample(self) -> dict:
        rng = np.random.default_rng(self.seed)
        sx, sy = rng.uniform(-self.shift_px, self.shift_px, size=2)
        kx, ky = rng.uniform(1 - self.scale_delta, 1 + self.scale_delta, size=2)
        mag = rng.uniform(self.defocus_min_um, self.defocus_max_um)
        sign = rng.choice([-1.0, 1.0]) if self.random_sign else 1.0
        return {
            "shift_x_px": float(sx),
            "shift_y_px": float(sy),
            "scale_x": float(kx),
            "scale_y": float(ky),
            "defocus_um": float(sign * mag),
        }


@dataclass
class TrialReport:
    seed: int
    image_nmse: float
    param_nmse: float
    iterations: int
    initial_nmse: float = float("nan")
    diverged: bool = False
    family: str = ""


def trial_seed(seed: int, index: int) -> int:
    """Independent per-trial seed derived from the experiment seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def aggregate(reports: Sequence[TrialReport]) -> dict:
    """Mean/std per metric; independent of report order."""
    out: dict = {"n_trials": len(reports), "n_diverged": int(sum(r.diverged for r in reports))}
    for key in ("image_nmse", "param_nmse", "initial_nmse", "iterations"):
        vals = np.sort(np.array([getattr(r, key) for r in reports], dtype=float))
        out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


# ------------------------------------------------------------------- helpers


def add_noise(img: IntensityImage, sigma_rel: float, seed: int) -> IntensityImage:
    """Zero-mean Gaussian noise of std ``sigma_rel * max(img)``, clamped at 0."""
    if sigma_rel < 0:
        raise ParameterError("sigma_rel must be >= 0")
    a = img.array()
    if sigma_rel == 0:
        return img
    rng = np.random.default_rng(seed)
    noisy = a + rng.normal(0.0, sigma_rel * float(a.max()), size=a.shape)
    return IntensityImage(img.grid, np.clip(noisy, 0.0, None))


def _resample_complex(u: np.ndarray, p: dict) -> np.ndarray:
    args = (p["scale_x"], p["scale_y"], p["shift_x_px"], p["shift_y_px"])
    return resample_bilinear(u.real, *args) + 1j * resample_bilinear(u.imag, *args)


def make_ground_truth_psf(base: SampledField, spec: PerturbationSpec) -> SampledField:
    """Shift/scale the real and imaginary planes of ``base`` then defocus it."""
    p = spec.sample()
    moved = SampledField(base.grid, _resample_complex(base.array(), p))
    return wp_forward(moved, p["defocus_um"])


def psf_model(settings: ExperimentSettings, field0: np.ndarray, trainable: bool) -> MicroscopeModel:
    """Source -> WP1 -> C1."""
    params = [TrainableParam.from_complex("psf", field0)] if trainable else []
    blocks = [PsfSource(field0, "psf" if trainable else None), WavePropagation(0.0), CameraBlock()]
    return MicroscopeModel(settings.grid, blocks, params, magnification=settings.magnification)


def four_f_model(
    settings: ExperimentSettings, field0: np.ndarray, phi: np.ndarray, trainable: bool, bounds=None
) -> MicroscopeModel:
    """Source -> WP1 -> L1 -> PM -> L2 -> C2 with the mask at the Fourier plane."""
    relay = LensBlock(settings.relay_focal_um, settings.relay_pupil_radius_um, front_focal=True)
    params = [TrainableParam("pm", phi, kind="phase", bounds=bounds)] if trainable else []
    blocks = [
        PsfSource(field0),
        WavePropagation(0.0),
        relay,
        PhaseMaskBlock(phi, "pm" if trainable else None),
        LensBlock(settings.relay_focal_um, settings.relay_pupil_radius_um, front_focal=True),
        CameraBlock(),
    ]
    return MicroscopeModel(settings.grid, blocks, params, magnification=settings.magnification)


def synthesize_stack(
    model: MicroscopeModel, obj: IntensityImage, depths: Sequence[float], noise: float = 0.0, seed: int = 0
) -> DepthStack:
    imgs = model.forward(obj, list(depths))
    imgs = [IntensityImage(im.grid, np.asarray(im.values)) for im in imgs]
    if noise > 0:
        imgs = [add_noise(im, noise, trial_seed(seed, i)) for i, im in enumerate(imgs)]
    return DepthStack(imgs, list(depths), obj)


def _unit_sum(a: np.ndarray) -> np.ndarray:
    return a / a.sum()


def psf_param_nmse(gt_field: np.ndarray, model: MicroscopeModel) -> float:
    """NMSE between unit-sum camera-plane irradiances (no registration)."""
    rec = model.params["psf"].as_complex()
    return nmse(_unit_sum(np.abs(gt_field) ** 2), _unit_sum(np.abs(rec) ** 2))


def _phase_nmse(gt: np.ndarray, rec: np.ndarray) -> float:
    if not np.any(gt):
        return float(np.sum(rec**2))
    return nmse(gt, rec)


# ---------------------------------------------------------------- PSF study


def psf_trial(
    settings: ExperimentSettings, seed: int, perturb: PerturbationSpec | None = None, spherical_waves: float = 0.0
) -> tuple[TrialReport, dict]:
    """One PSF-recovery trial; returns the report and the recovered arrays.

    The ground truth is the ideal PSF, optionally given ``spherical_waves`` of
    spherical aberration, then perturbed; calibration starts from the ideal PSF.
    """
    grid = settings.grid
    base = gen_ideal_psf(settings.objective, grid, 0.0)
    spec = perturb if perturb is not None else PerturbationSpec(seed=seed)
    gt_base = gen_ideal_psf(settings.objective, grid, 0.0, spherical_waves) if spherical_waves else base
    gt = make_ground_truth_psf(gt_base, spec)
    obj = settings.target()
    obs = synthesize_stack(psf_model(settings, gt.array(), False), obj, settings.depths_um, settings.noise_sigma_rel, seed)

    model = psf_model(settings, base.array(), True)
    try:
        res = calibrate(model, obs, obj, settings.psf_adam, param_metric=lambda m: psf_param_nmse(gt.array(), m))
    except DivergenceError as exc:
        log.warning("trial %d diverged: %s", seed, exc)
        init = psf_model(settings, base.array(), False)
        e = nmse(obs.images, init.forward(obj, obs.depths_um))
        return TrialReport(seed, e, float(psf_param_nmse(gt.array(), psf_model(settings, base.array(), True))), exc.iteration, e, True), {}
    rep = TrialReport(seed, res.image_nmse, float(res.param_nmse), res.iterations, res.initial_loss)
    return rep, {"psf": model.params["psf"].as_complex(), "gt": gt.array(), "loss_history": res.loss_history, "result": res}


def _psf_worker(args):
    settings, seed = args
    rep, arrays = psf_trial(settings, seed)
    return rep, arrays.get("psf")


def _pm_worker(args):
    settings, seed = args
    rep, arrays = pm_trial(settings, seed)
    return rep, arrays.get("pm")


def _run_pool(worker, settings, seeds, threads: int):
    jobs = [(settings, s) for s in seeds]
    if threads <= 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(worker, jobs))


def run_psf_recovery(
    n_trials: int,
    cfg: AdamConfig | None = None,
    seed: int = 0,
    settings: ExperimentSettings | None = None,
    threads: int = 1,
    recovered: list | None = None,
) -> tuple[list[TrialReport], dict]:
    """Recover ``n_trials`` randomly perturbed PSFs from three-depth stacks.

    If ``recovered`` is a list, the recovered complex fields are appended to
    it in trial order (``None`` for diverged trials).
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    settings = settings or ExperimentSettings()
    if cfg is not None:
        settings = replace(settings, psf_adam=cfg)
    seeds = [trial_seed(seed, i) for i in range(n_trials)]
    out = _run_pool(_psf_worker, settings, seeds, threads)
    if recovered is not None:
        recovered.extend(a for _, a in out)
    reports = [r for r, _ in out]
    return reports, aggregate(reports)


# ----------------------------------------------------------------- PM study


def fourier_pupil_radius_px(settings: ExperimentSettings) -> float:
    """Radius, in Fourier-plane pixels, of the disk the source spectrum fills."""
    grid = settings.grid
    pitch_f = lens_output_pitch(grid, settings.relay_focal_um)
    na_image = settings.na / settings.magnification
    return settings.relay_focal_um * na_image / pitch_f


def pupil_support(settings: ExperimentSettings) -> np.ndarray:
    n = settings.n_side
    ax = np.arange(n) - n // 2
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    r = fourier_pupil_radius_px(settings)
    return xx**2 + yy**2 <= r * r


def sample_mask(n: int, seed: int, radius_px: float | None = None) -> tuple[np.ndarray, str]:
    """Random cubic or circular-gradient mask (fair coin), randomly scaled and moved.

    Mask coordinates are normalized to ``radius_px`` (the illuminated disk).
    """
    rng = np.random.default_rng(seed)
    family = "cubic" if rng.random() < 0.5 else "circular"
    peak = rng.uniform(0.2, 1.0) * PEAK_PHASE_LIMIT
    sx, sy = rng.uniform(-0.2, 0.2, size=2)
    if family == "cubic":
        phi = cubic_mask(n, peak, radius_px, scale=rng.uniform(0.7, 1.3), shift_x=sx, shift_y=sy)
    else:
        phi = circular_gradient_mask(n, peak, rng.uniform(0.2, 0.6), radius_px, shift_x=sx, shift_y=sy)
    return phi, family


def pm_trial(settings: ExperimentSettings, seed: int, phi_gt: np.ndarray | None = None) -> tuple[TrialReport, dict]:
    grid = settings.grid
    base = gen_ideal_psf(settings.objective, grid, 0.0).array()
    if phi_gt is None:
        phi_gt, family = sample_mask(grid.n_side, seed, fourier_pupil_radius_px(settings))
    else:
        family = "given"
    obj = settings.target()
    gt_model = four_f_model(settings, base, phi_gt, False)
    obs = synthesize_stack(gt_model, obj, settings.depths_um, settings.noise_sigma_rel, seed)

    bounds = (0.0, PEAK_PHASE_LIMIT) if settings.pm_bounds else None
    model = four_f_model(settings, base, np.zeros_like(phi_gt), True, bounds=bounds)
    support = pupil_support(settings)
    metric = lambda m: _phase_nmse(phi_gt[support], m.params["pm"].values[support])  # noqa: E731
    try:
        res = calibrate(model, obs, obj, settings.pm_adam, param_metric=metric)
    except DivergenceError as exc:
        log.warning("trial %d diverged: %s", seed, exc)
        init = four_f_model(settings, base, np.zeros_like(phi_gt), False)
        e = nmse(obs.images, init.forward(obj, obs.depths_um))
        return TrialReport(seed, e, _phase_nmse(phi_gt[support], 0 * phi_gt[support]), exc.iteration, e, True, family), {}
    rep = TrialReport(seed, res.image_nmse, float(res.param_nmse), res.iterations, res.initial_loss, False, family)
    return rep, {"pm": model.params["pm"].values.copy(), "gt": phi_gt, "loss_history": res.loss_history, "result": res}


def run_pm_recovery(
    n_trials: int,
    cfg: AdamConfig | None = None,
    seed: int = 0,
    settings: ExperimentSettings | None = None,
    threads: int = 1,
    recovered: list | None = None,
) -> tuple[list[TrialReport], dict]:
    """Recover ``n_trials`` random Fourier-plane phase masks in the 4-f stack.

    ``recovered`` collects the fitted masks as in :func:`run_psf_recovery`.
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    settings = settings or ExperimentSettings()
    if cfg is not None:
        settings = replace(settings, pm_adam=cfg)
    seeds = [trial_seed(seed, i) for i in range(n_trials)]
    out = _run_pool(_pm_worker, settings, seeds, threads)
    if recovered is not None:
        recovered.extend(a for _, a in out)
    reports = [r for r, _ in out]
    return reports, aggregate(reports)


# --------------------------------------------------------- depth prediction


def predict_depth(
    model: MicroscopeModel,
    query: IntensityImage,
    object: IntensityImage,
    depth_grid_um: Sequence[float],
    gain: float | None = None,
) -> float:
    """Depth in ``depth_grid_um`` whose synthesized image best matches ``query``.

    Candidates whose NMSE exceeds the minimum by less than a relative 1e-9
    (plus 1e-18 absolute, for exact matches) count as ties; ties go to the
    smaller ``|depth|`` and then to the positive side.
    """
    grid = list(depth_grid_um)
    if not grid:
        raise ParameterError("depth grid is empty")
    errs = depth_errors(model, query, object, grid, gain)
    return _argmin_depth(grid, errs)


def depth_errors(model, query, object, grid, gain=None) -> np.ndarray:
    imgs = model.forward(object, grid, gain=gain)
    q = query.array() if isinstance(query, IntensityImage) else np.asarray(query)
    return np.array([nmse(q, im.array()) for im in imgs])


def _argmin_depth(grid: Sequence[float], errs: np.ndarray) -> float:
    m = float(errs.min())
    tied = [d for d, e in zip(grid, errs) if e <= m * (1 + 1e-9) + 1e-18]
    return float(sorted(tied, key=lambda d: (abs(d), -d))[0])


def _predict_stack(model, stack: DepthStack, grid, gain=None) -> list[float]:
    from .autodiff import ConvOperand

    op = ConvOperand(stack.object.array())
    synth = [im.array() for im in model.forward(op, list(grid), gain=gain)]
    preds = []
    for q in stack.images:
        qa = q.array()
        errs = np.array([nmse(qa, s) for s in synth])
        preds.append(_argmin_depth(grid, errs))
    return preds


def default_depth_grid() -> list[float]:
    return [float(d) for d in range(-50, 51, 2)]


def run_depth_evaluation(seed: int = 0, settings: ExperimentSettings | None = None) -> dict:
    """Calibrate one perturbed PSF, then predict every depth of a full GT stack.

    The ground-truth microscope carries ``settings.depth_gt_spherical_waves``
    of spherical aberration on top of the usual random perturbation; as for
    a real objective this makes its focal stack asymmetric about focus.
    Calibration uses the three training depths of ``settings``. Returns
    per-depth predictions for the calibrated model and for the unaberrated
    ideal-PSF control, with mean absolute errors.
    """
    settings = settings or ExperimentSettings()
    grid_depths = default_depth_grid()
    rep, arrays = psf_trial(settings, seed, spherical_waves=settings.depth_gt_spherical_waves)
    gt = arrays["gt"]
    obj = settings.target()
    gt_stack = synthesize_stack(psf_model(settings, gt, False), obj, grid_depths)

    if not arrays:
        raise DivergenceError(rep.iterations, float("nan"))
    calibrated = psf_model(settings, arrays["psf"], False)
    ideal = psf_model(settings, gen_ideal_psf(settings.objective, settings.grid, 0.0).array(), False)
    pred_cal = _predict_stack(calibrated, gt_stack, grid_depths, gain=arrays["result"].gain)
    pred_ideal = _predict_stack(ideal, gt_stack, grid_depths)
    truth = np.array(grid_depths)
    return {
        "seed": seed,
        "trial": rep,
        "true_depth": grid_depths,
        "calibrated": pred_cal,
        "ideal": pred_ideal,
        "calibrated_mae": float(np.mean(np.abs(np.array(pred_cal) - truth))),
        "ideal_mae": float(np.mean(np.abs(np.array(pred_ideal) - truth))),
        "ideal_sign_flips": int(np.sum(np.sign(pred_ideal) * np.sign(truth) < 0)),
    }
