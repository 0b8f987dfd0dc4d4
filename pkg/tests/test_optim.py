import numpy as np
import pytest

from wavecal import autodiff as ad
from wavecal.autodiff import Tape, TrainableParam
from wavecal.blocks import CameraBlock, MicroscopeModel, PsfSource, WavePropagation
from wavecal.errors import ContractError, DegenerateReferenceError, DivergenceError, ParameterError, TapeStateError
from wavecal.field import GridSpec, IntensityImage
from wavecal.optim import AdamConfig, DepthStack, adam_step, calibrate, nmse


def test_nmse_basics(rng):
    a = rng.random((8, 8))
    assert nmse(a, a) == 0
    assert nmse(a, np.zeros_like(a)) == pytest.approx(1.0)
    assert nmse([a, a], [a, 2 * a]) == pytest.approx(0.5)
    with pytest.raises(DegenerateReferenceError):
        nmse(np.zeros((4, 4)), a[:4, :4])
    with pytest.raises(ContractError):
        nmse(a, a[:4])


def test_adam_reaches_quadratic_minimum(rng):
    target = rng.normal(size=(8, 8))
    p = TrainableParam("x", rng.normal(size=(8, 8)))
    cfg = AdamConfig(lr=1e-2)
    for _ in range(2000):
        tape = Tape()
        diff = ad.add(tape.watch(p), -target)
        ad.backward(ad.total(ad.cmul(diff, diff)))
        adam_step([p], cfg)
    assert np.linalg.norm(p.values - target) < 1e-3


def test_adam_first_step_has_size_lr():
    p = TrainableParam("x", np.array([1.0, -2.0, 3.0]))
    p.grad = np.array([5.0, -0.1, 1e-3])
    p.grad_ready = True
    adam_step([p], AdamConfig(lr=0.1))
    np.testing.assert_allclose(p.values, [0.9, -1.9, 2.9], atol=1e-4)


def test_adam_needs_fresh_gradient():
    p = TrainableParam("x", np.zeros(3))
    with pytest.raises(TapeStateError):
        adam_step([p], AdamConfig())


def test_adam_clamps_to_bounds():
    p = TrainableParam("x", np.array([0.0, 1.0]), bounds=(0.0, 1.0))
    p.grad = np.array([1.0, -1.0])
    p.grad_ready = True
    adam_step([p], AdamConfig(lr=0.5))
    np.testing.assert_array_equal(p.values, [0.0, 1.0])


def test_adam_config_validation():
    with pytest.raises(ParameterError):
        AdamConfig(lr=0)
    with pytest.raises(ParameterError):
        AdamConfig(beta1=0.999, beta2=0.9)
    with pytest.raises(ParameterError):
        AdamConfig(max_iters=0)
    cfg = AdamConfig()
    assert (cfg.lr, cfg.field_lr, cfg.max_iters, cfg.plateau_patience) == (1e-2, 1e-3, 2000, 100)


def test_depth_stack_validation(rng):
    g = GridSpec(8, 1.0, 0.5)
    im = IntensityImage(g, rng.random((8, 8)))
    with pytest.raises(ContractError):
        DepthStack([im, im], [0.0], im)
    with pytest.raises(ContractError):
        DepthStack([im, im], [1.0, 0.0], im)
    s = DepthStack([im, im, im], [-1.0, 0.0, 1.0], im)
    assert s.subset([0.0]).depths_um == [0.0]


def _tiny_problem(seed=0, n=32):
    rng = np.random.default_rng(seed)
    g = GridSpec(n, 6.9, 0.633)
    x, y = g.coords()
    gt = np.exp(-(x**2 + y**2) / (3 * 6.9) ** 2) * np.exp(1j * 0.5 * x / 6.9 / 8)
    obj = IntensityImage(g, rng.random((n, n)))
    depths = [-2.0, 0.0, 2.0]
    truth = MicroscopeModel(g, [PsfSource(gt), WavePropagation(0.0), CameraBlock()], magnification=20)
    obs = DepthStack([IntensityImage(g, im.array()) for im in truth.forward(obj, depths)], depths, obj)
    init = np.exp(-(x**2 + y**2) / (4 * 6.9) ** 2).astype(complex)
    p = TrainableParam.from_complex("psf", init)
    model = MicroscopeModel(g, [PsfSource(init, "psf"), WavePropagation(0.0), CameraBlock()], [p], magnification=20)
    return model, obs, gt


def test_calibration_reduces_loss_and_keeps_best():
    model, obs, _ = _tiny_problem()
    res = calibrate(model, obs, cfg=AdamConfig(lr=1e-2, field_lr=1e-2, max_iters=60))
    assert res.image_nmse <= res.initial_loss
    assert res.image_nmse == pytest.approx(min(res.loss_history), rel=1e-9)
    assert res.image_nmse < 0.5 * res.initial_loss
    assert res.best_iteration == int(np.argmin(res.loss_history))


def test_calibration_from_ground_truth_stays_put():
    model, obs, gt = _tiny_problem()
    model.params["psf"].values = np.stack([gt.real, gt.imag])
    res = calibrate(model, obs, cfg=AdamConfig(max_iters=5))
    assert res.image_nmse < 1e-20


def test_plateau_stops_early():
    model, obs, gt = _tiny_problem()
    model.params["psf"].values = np.stack([gt.real, gt.imag])
    res = calibrate(model, obs, cfg=AdamConfig(max_iters=500, plateau_patience=5, plateau_tol=1e-3), fit_gain=False)
    assert res.stop_reason == "plateau"
    assert res.iterations == 6


def test_calibration_is_deterministic():
    a = calibrate(*_tiny_problem()[:2], cfg=AdamConfig(field_lr=1e-2, max_iters=20))
    b = calibrate(*_tiny_problem()[:2], cfg=AdamConfig(field_lr=1e-2, max_iters=20))
    assert a.loss_history == b.loss_history


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    model, obs, _ = _tiny_problem()
    with pytest.raises(DivergenceError):
        calibrate(model, obs, cfg=AdamConfig(lr=1e6, field_lr=1e6, max_iters=50))


def test_nothing_to_calibrate():
    model, obs, gt = _tiny_problem()
    frozen = MicroscopeModel(model.grid, [PsfSource(gt), WavePropagation(0.0), CameraBlock()], magnification=20)
    with pytest.raises(ContractError):
        calibrate(frozen, obs, fit_gain=False)
