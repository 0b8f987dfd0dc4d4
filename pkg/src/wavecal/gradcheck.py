"""Central finite-difference checks of the reverse-mode gradients.

Each check wraps a primitive (or a whole model) into a real scalar loss of
one real parameter grid, runs ``backward`` once and compares a random subset
of gradient coordinates against ``(L(x + h e_i) - L(x - h e_i)) / 2h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, TrainableParam
from .blocks import (
    CameraBlock,
    LensBlock,
    MicroscopeModel,
    PhaseMaskBlock,
    PsfSource,
    WavePropagation,
    lens_forward,
    phase_mask_forward,
    wp_forward,
)
from .field import GridSpec, SampledField

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_coords: int


def check_gradient(
    name: str,
    loss_fn: Callable,
    x0: np.ndarray,
    rng: np.random.Generator,
    n_coords: int = 20,
    step: float = FD_STEP,
) -> CheckResult:
    """Compare the taped gradient of ``loss_fn`` at ``x0`` with central differences.

    ``loss_fn(x)`` must return a recorded scalar when ``x`` is a ``Var`` and a
    plain float otherwise. The relative error of a coordinate is
    ``|a - f| / max(|a|, |f|, floor)`` where ``floor`` is 1e-3 of the largest
    sampled gradient magnitude, which keeps near-zero coordinates from
    turning rounding noise into huge ratios.
    """
    p = TrainableParam(name, x0.copy(), kind="phase")
    tape = Tape()
    ad.backward(loss_fn(tape.watch(p)))
    grad = p.grad

    flat = x0.ravel()
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    analytic, numeric = [], []
    for i in idx:
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        lp = float(loss_fn(xp.reshape(x0.shape)))
        lm = float(loss_fn(xm.reshape(x0.shape)))
        numeric.append((lp - lm) / (2 * step))
        analytic.append(grad.ravel()[i])
    a, f = np.array(analytic), np.array(numeric)
    floor = 1e-3 * max(np.abs(a).max(), np.abs(f).max(), 1e-300)
    rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return CheckResult(name, float(rel.max()), len(idx))


def _complex_probe(y, c: np.ndarray, w: np.ndarray):
    """Real scalar ``sum(w * |y + c|**2)`` for a complex grid ``y``."""
    return ad.total(ad.cmul(ad.abs2(ad.add(y, c)), w))


def _real_probe(y, w: np.ndarray):
    return ad.total(ad.cmul(y, w))


def primitive_suite(n: int = 16, seed: int = 0, n_coords: int = 20) -> list[CheckResult]:
    """Gradient checks for every differentiable primitive and block, plus the 4-f pipeline."""
    rng = np.random.default_rng(seed)

    def cgrid(shape=(n, n)):
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    c, w = cgrid(), rng.uniform(0.5, 1.5, size=(n, n))
    c2, w2 = cgrid((2 * n, 2 * n)), rng.uniform(0.5, 1.5, size=(2 * n, 2 * n))
    wh = rng.uniform(0.5, 1.5, size=(n // 2, n // 2))
    ch = cgrid((n // 2, n // 2))
    other = cgrid()
    obj = rng.uniform(0, 1, size=(n, n))
    ref = rng.uniform(0, 1, size=(n, n))
    pair0 = rng.normal(size=(2, n, n))
    phi0 = rng.uniform(-np.pi, np.pi, size=(n, n))
    pos0 = rng.uniform(0.1, 1.0, size=(n, n))

    def z(x):
        return ad.as_complex(x)

    grid = GridSpec(n, 4.0, 0.5)
    lens = LensBlock(2000.0, 1e6)
    lens_c = LensBlock(2000.0, 20.0)  # clipping pupil

    checks: dict[str, tuple[Callable, np.ndarray]] = {
        "as_complex": (lambda x: _complex_probe(z(x), c, w), pair0),
        "fft2": (lambda x: _complex_probe(ad.fft2(z(x)), c * n, w), pair0),
        "ifft2": (lambda x: _complex_probe(ad.ifft2(z(x)), c / n, w), pair0),
        "pad": (lambda x: _complex_probe(ad.pad(z(x), 2 * n), c2, w2), pair0),
        "crop": (lambda x: _complex_probe(ad.crop(z(x), n // 2), ch, wh), pair0),
        "cmul": (lambda x: _complex_probe(ad.cmul(z(x), other), c, w), pair0),
        "cmul_both": (lambda x: _complex_probe(ad.cmul(z(x), z(x)), c, w), pair0),
        "add": (lambda x: _complex_probe(ad.add(z(x), other), c, w), pair0),
        "scale": (lambda x: _real_probe(ad.scale(x, 2.5), w), phi0),
        "cexp_j": (lambda x: _complex_probe(ad.cexp_j(x), c, w), phi0),
        "abs2": (lambda x: _real_probe(ad.abs2(z(x)), w), pair0),
        "exp": (lambda x: _real_probe(ad.exp(x), w), phi0 / 4),
        "normalize_sum": (lambda x: _real_probe(ad.normalize_sum(x), w), pos0),
        "conv2_fft": (lambda x: _real_probe(ad.conv2_fft(x, obj), w), pos0),
        "nmse": (lambda x: ad.nmse(ref, x), pos0),
        "nmse_ref": (lambda x: ad.nmse(x, ref), pos0),
        "wp_forward": (lambda x: _complex_probe(wp_forward(SampledField(grid, z(x)), 300.0).values, c, w), pair0),
        "wp_backward": (lambda x: _complex_probe(wp_forward(SampledField(grid, z(x)), -300.0).values, c, w), pair0),
        "lens_forward": (lambda x: _complex_probe(lens_forward(SampledField(grid, z(x)), lens).values, c, w), pair0),
        "lens_pupil": (lambda x: _complex_probe(lens_forward(SampledField(grid, z(x)), lens_c).values, c, w), pair0),
        "phase_mask": (
            lambda x: _complex_probe(phase_mask_forward(SampledField(grid, other), x).values, c, w),
            phi0,
        ),
    }
    results = [check_gradient(name, fn, x0, rng, n_coords) for name, fn, x0 in ((k, *v) for k, v in checks.items())]
    results += pipeline_checks(n, rng, n_coords)
    return results


def fig1_model(n: int, field0: np.ndarray, phi: np.ndarray, psf_param: bool, pm_param: bool) -> MicroscopeModel:
    """PSF -> WP1 -> L1 -> PM -> L2 -> C2 on a small grid (4 µm pitch, λ = 0.5 µm)."""
    grid = GridSpec(n, 4.0, 0.5)
    params = []
    if psf_param:
        params.append(TrainableParam.from_complex("psf", field0))
    if pm_param:
        params.append(TrainableParam("pm", phi, kind="phase"))
    blocks = [
        PsfSource(field0, "psf" if psf_param else None),
        WavePropagation(0.0),
        LensBlock(2000.0, 1e6, front_focal=True),
        PhaseMaskBlock(phi, "pm" if pm_param else None),
        LensBlock(2000.0, 1e6, front_focal=True),
        CameraBlock(),
    ]
    return MicroscopeModel(grid, blocks, params, magnification=20.0)


def pipeline_checks(n: int, rng: np.random.Generator, n_coords: int = 20) -> list[CheckResult]:
    """Gradients of the mean multi-depth NMSE through the whole 4-f stack."""
    ax = np.arange(n) - n // 2
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    field0 = np.exp(-(xx**2 + yy**2) / (2 * (n / 8) ** 2)) * np.exp(1j * rng.uniform(-0.3, 0.3, (n, n)))
    phi0 = rng.uniform(0, 2, size=(n, n))
    obj = rng.uniform(0, 1, size=(n, n))
    depths = [-1.0, 0.0, 1.0]  # object space; the first WP sees ±400 µm
    truth = fig1_model(n, field0, rng.uniform(0, 2, size=(n, n)), False, False)
    refs = [im.array() for im in truth.forward(obj, depths)]
    op = ad.ConvOperand(obj)

    def loss_for(which: str):
        def fn(x):
            is_var = isinstance(x, ad.Var)
            if which == "psf":
                m = fig1_model(n, field0, phi0, False, False)
                src = ad.as_complex(x)
                m.blocks[0] = PsfSource(np.asarray(ad.value_of(src)))
                return _model_loss(m, refs, op, depths, psf=src if is_var else None)
            m = fig1_model(n, field0, np.asarray(ad.value_of(x)), False, False)
            return _model_loss(m, refs, op, depths, phi=x if is_var else None)

        return fn

    pair0 = np.stack([field0.real, field0.imag])
    both = fig1_model(n, field0, phi0, True, True)
    return [
        check_gradient("pipeline_psf", loss_for("psf"), pair0, rng, n_coords),
        check_gradient("pipeline_pm", loss_for("pm"), phi0, rng, n_coords),
        *check_model_gradients(both, refs, op, depths, rng, n_coords),
    ]


def check_model_gradients(
    model: MicroscopeModel, refs, op, depths, rng: np.random.Generator, n_coords: int = 20, step: float = FD_STEP
) -> list[CheckResult]:
    """Finite-difference check of every registered parameter through ``model.forward``."""
    from .optim import stack_loss

    tape = Tape()
    ad.backward(stack_loss(model, refs, op, depths, tape=tape))
    out = []
    for name, p in model.params.items():
        grad = p.grad.copy()
        base = p.values.copy()
        idx = rng.choice(base.size, size=min(n_coords, base.size), replace=False)
        a, f = [], []
        for i in idx:
            vals = []
            for sgn in (1, -1):
                v = base.copy().ravel()
                v[i] += sgn * step
                p.values = v.reshape(base.shape)
                vals.append(float(stack_loss(model, refs, op, depths)))
            p.values = base
            f.append((vals[0] - vals[1]) / (2 * step))
            a.append(grad.ravel()[i])
        a, f = np.array(a), np.array(f)
        floor = 1e-3 * max(np.abs(a).max(), np.abs(f).max(), 1e-300)
        rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        out.append(CheckResult(f"model_{name}", float(rel.max()), len(idx)))
    return out


def _model_loss(model: MicroscopeModel, refs, op, depths, psf=None, phi=None):
    """Mean NMSE of ``model`` with the source field and/or mask swapped for Vars."""
    src = SampledField(model.grid, psf if psf is not None else model.blocks[0].field0)
    losses = []
    for d, r in zip(depths, refs):
        u = src
        first = True
        for blk in model.blocks[1:-1]:
            if isinstance(blk, WavePropagation):
                u = wp_forward(u, model.image_distance(d, blk.distance_um) if first else blk.distance_um)
                first = False
            elif isinstance(blk, LensBlock):
                u = lens_forward(u, blk)
            elif isinstance(blk, PhaseMaskBlock):
                u = phase_mask_forward(u, phi if phi is not None else blk.phi)
        img = ad.conv2_fft(ad.normalize_sum(ad.abs2(u.values)), op)
        losses.append(ad.nmse(r, img))
    return ad.mean(losses)
