from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from wavecal.blocks import wp_forward
from wavecal.errors import ParameterError
from wavecal.experiments import (
    ExperimentSettings,
    PerturbationSpec,
    TrialReport,
    _argmin_depth,
    add_noise,
    aggregate,
    fourier_pupil_radius_px,
    make_ground_truth_psf,
    pm_trial,
    predict_depth,
    psf_model,
    psf_trial,
    run_psf_recovery,
    sample_mask,
    trial_seed,
)
from wavecal.field import GridSpec, IntensityImage
from wavecal.optim import AdamConfig
from wavecal.psf import gen_ideal_psf
from wavecal.targets import circular_gradient_mask, cubic_mask, usaf_target

SMALL = ExperimentSettings(
    n_side=64,
    psf_adam=AdamConfig(lr=1e-2, field_lr=1e-2, max_iters=30, plateau_patience=10, plateau_tol=1e-4),
    pm_adam=AdamConfig(lr=0.1, max_iters=30, plateau_patience=10, plateau_tol=1e-4),
)


def test_perturbation_sampling_is_uniform():
    n = 10000
    draws = [PerturbationSpec(seed=s).sample() for s in range(n)]
    cols = {k: np.array([d[k] for d in draws]) for k in draws[0]}
    assert stats.kstest(cols["shift_x_px"], stats.uniform(-20, 40).cdf).pvalue > 0.01
    assert stats.kstest(cols["shift_y_px"], stats.uniform(-20, 40).cdf).pvalue > 0.01
    assert stats.kstest(cols["scale_x"], stats.uniform(0.7, 0.6).cdf).pvalue > 0.01
    assert stats.kstest(cols["scale_y"], stats.uniform(0.7, 0.6).cdf).pvalue > 0.01
    mag = np.abs(cols["defocus_um"])
    assert stats.kstest(mag, stats.uniform(200, 800).cdf).pvalue > 0.01
    assert mag.min() >= 200
    frac_pos = np.mean(cols["defocus_um"] > 0)
    assert abs(frac_pos - 0.5) < 0.03


def test_perturbation_spec_validation():
    with pytest.raises(ParameterError):
        PerturbationSpec(defocus_min_um=100)
    with pytest.raises(ParameterError):
        PerturbationSpec(defocus_min_um=500, defocus_max_um=300)


def test_degenerate_perturbation_equals_plain_propagation():
    s = SMALL
    base = gen_ideal_psf(s.objective, s.grid)
    spec = PerturbationSpec(shift_px=0, scale_delta=0, defocus_min_um=200, defocus_max_um=200, random_sign=False)
    gt = make_ground_truth_psf(base, spec)
    np.testing.assert_allclose(gt.array(), wp_forward(base, 200.0).array(), atol=1e-14)


def test_ground_truth_is_deterministic():
    base = gen_ideal_psf(SMALL.objective, SMALL.grid)
    a = make_ground_truth_psf(base, PerturbationSpec(seed=5)).array()
    b = make_ground_truth_psf(base, PerturbationSpec(seed=5)).array()
    np.testing.assert_array_equal(a, b)


def test_noise_statistics():
    g = GridSpec(64, 1.0, 0.5)
    flat = IntensityImage(g, np.full((64, 64), 10.0))
    out = add_noise(flat, 0.01, seed=3).array()
    assert abs(np.std(out - 10.0) - 0.1) / 0.1 < 0.05
    assert add_noise(flat, 0.0, 3) is flat
    dark = IntensityImage(g, np.zeros((64, 64)) + np.eye(64))
    assert add_noise(dark, 0.5, 1).array().min() >= 0
    with pytest.raises(ParameterError):
        add_noise(flat, -1.0, 0)


def test_trial_seeds_are_distinct_and_stable():
    seeds = [trial_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [trial_seed(7, i) for i in range(100)]


def test_aggregate_is_order_invariant():
    reps = [TrialReport(i, 0.1 * i, 1.0 / (i + 1), 10 + i, 0.3 * i + 1) for i in range(7)]
    assert aggregate(reps) == aggregate(list(reversed(reps)))


def test_usaf_target_properties():
    a = usaf_target(256, 0)
    assert a.shape == (256, 256)
    assert set(np.unique(a)) == {0.0, 1.0}
    assert 0.05 < a.mean() < 0.4
    assert not np.array_equal(a, usaf_target(256, 1))
    np.testing.assert_array_equal(a, usaf_target(256, 0))


def test_mask_families_respect_range():
    n = 64
    for peak in (0.5, 5 * np.pi):
        c = cubic_mask(n, peak, 20, scale=1.2, shift_x=0.1)
        assert c.min() >= 0 and c.max() <= peak + 1e-12
        r = circular_gradient_mask(n, peak, 0.4, 20)
        assert r.min() >= 0 and r.max() <= peak + 1e-12
    families = {sample_mask(n, s, 20)[1] for s in range(20)}
    assert families == {"cubic", "circular"}


def test_fourier_pupil_radius():
    s = ExperimentSettings()
    # NA/M/λ cycles per µm times f λ: the disk radius in Fourier-plane pixels
    expected = s.relay_focal_um * (s.na / s.magnification) / (s.wavelength_um * s.relay_focal_um / (256 * 6.9))
    assert fourier_pupil_radius_px(s) == pytest.approx(expected)


def test_zero_perturbation_trial_fits_exactly():
    spec = PerturbationSpec(shift_px=0, scale_delta=0, defocus_min_um=200, defocus_max_um=200, random_sign=False)
    s = replace(SMALL, psf_adam=AdamConfig(max_iters=3))
    # ground truth is the ideal PSF moved by 200 µm; the model starts at the ideal PSF
    rep, _ = psf_trial(s, 0, spec)
    assert rep.image_nmse <= rep.initial_nmse


def test_psf_trial_improves():
    rep, arrays = psf_trial(SMALL, 11)
    assert rep.image_nmse <= rep.initial_nmse
    assert rep.image_nmse < 0.5 * rep.initial_nmse
    assert arrays["psf"].shape == (64, 64)


def test_zero_mask_control():
    rep, _ = pm_trial(SMALL, 0, phi_gt=np.zeros((64, 64)))
    assert rep.image_nmse < 1e-10


def test_pm_trial_improves():
    rep, _ = pm_trial(SMALL, 4)
    assert rep.image_nmse <= rep.initial_nmse


def test_run_psf_recovery_is_reproducible():
    a, agg_a = run_psf_recovery(2, seed=3, settings=SMALL)
    b, agg_b = run_psf_recovery(2, seed=3, settings=SMALL)
    assert a == b and agg_a == agg_b
    with pytest.raises(ParameterError):
        run_psf_recovery(0, settings=SMALL)


def test_predict_depth_self_consistency():
    s = SMALL
    u = gen_ideal_psf(s.objective, s.grid, 0.0, spherical_waves=0.2).array()
    model = psf_model(s, u, False)
    obj = IntensityImage(s.grid, usaf_target(64, 0))
    grid = [-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0]
    for d in grid:
        q = model.forward(obj, [d])[0]
        assert predict_depth(model, q, obj, grid) == d
    with pytest.raises(ParameterError):
        predict_depth(model, q, obj, [])


def test_tie_break_prefers_small_then_positive_depth():
    assert _argmin_depth([-4.0, -2.0, 2.0, 4.0], np.array([0.1, 0.1, 0.1, 0.1])) == 2.0
    assert _argmin_depth([-2.0, 4.0], np.array([0.1, 0.1])) == -2.0
    assert _argmin_depth([-2.0, 0.0, 2.0], np.array([0.3, 0.2, 0.1])) == 2.0


def test_ideal_model_flips_sign_on_symmetric_stack():
    s = SMALL
    ideal = psf_model(s, gen_ideal_psf(s.objective, s.grid).array(), False)
    obj = IntensityImage(s.grid, usaf_target(64, 0))
    q = ideal.forward(obj, [-4.0])[0]
    # the unaberrated model cannot tell -4 from +4 and resolves the tie to +4
    assert predict_depth(ideal, q, obj, [-4.0, 4.0]) == 4.0
