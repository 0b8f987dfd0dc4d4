"""NMSE loss, Adam, and the calibration loop that fits model parameters to images."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ConvOperand, Tape, TrainableParam
from .blocks import MicroscopeModel
from .errors import ContractError, DegenerateReferenceError, DivergenceError, ParameterError, TapeStateError
from .field import IntensityImage

log = logging.getLogger(__name__)


def nmse(i, k) -> float:
    """``||i - k||^2 / ||i||^2``; stacks (sequences of grids) are concatenated."""
    if isinstance(i, (list, tuple)):
        i = np.concatenate([np.ravel(_arr(x)) for x in i])
        k = np.concatenate([np.ravel(_arr(x)) for x in k])
    i, k = np.asarray(_arr(i), dtype=float), np.asarray(_arr(k), dtype=float)
    if i.shape != k.shape:
        raise ContractError(f"shape mismatch: {i.shape} vs {k.shape}")
    den = float(np.sum(i * i))
    if den == 0:
        raise DegenerateReferenceError("nmse reference has zero norm")
    return float(np.sum((i - k) ** 2) / den)


def _arr(x):
    if isinstance(x, IntensityImage):
        return x.array()
    return ad.value_of(x)


@dataclass
class AdamConfig:
    """Adam hyperparameters plus the stopping rule.

    ``lr`` applies to phase and scalar parameters, ``field_lr`` to the
    real/imaginary planes of complex fields.
    """

    lr: float = 1e-2
    field_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 2000
    plateau_patience: int = 100
    plateau_tol: float = 1e-5

    def __post_init__(self) -> None:
        errs = []
        if not self.lr > 0 or not self.field_lr > 0:
            errs.append("learning rates must be positive")
        if not 0 < self.beta1 < self.beta2 < 1:
            errs.append("need 0 < beta1 < beta2 < 1")
        if not self.eps > 0:
            errs.append("eps must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            errs.append("max_iters must be an integer >= 1")
        if self.plateau_patience < 1 or self.plateau_tol < 0:
            errs.append("plateau_patience >= 1 and plateau_tol >= 0 required")
        if errs:
            raise ParameterError("; ".join(errs))

    def lr_for(self, p: TrainableParam) -> float:
        return self.field_lr if p.kind == "field" else self.lr

    def to_dict(self) -> dict:
        return asdict(self)


def adam_step(params: Sequence[TrainableParam], cfg: AdamConfig) -> None:
    """One bias-corrected Adam update, in place, for every parameter."""
    for p in params:
        if not p.grad_ready:
            raise TapeStateError(f"parameter {p.name!r} has no fresh gradient; run backward first")
    for p in params:
        st = p.adam_state
        st.step += 1
        g = p.grad
        st.m = cfg.beta1 * st.m + (1 - cfg.beta1) * g
        st.v = cfg.beta2 * st.v + (1 - cfg.beta2) * (g * g)
        m_hat = st.m / (1 - cfg.beta1**st.step)
        v_hat = st.v / (1 - cfg.beta2**st.step)
        p.values = p.values - cfg.lr_for(p) * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if p.bounds is not None:
            p.values = np.clip(p.values, *p.bounds)
        p.grad_ready = False


@dataclass
class CalibrationResult:
    final_params: dict[str, np.ndarray]
    loss_history: list[float]
    image_nmse: float
    param_nmse: float | None = None
    best_iteration: int = 0
    stop_reason: str = "max_iters"
    gain: float = 1.0

    @property
    def iterations(self) -> int:
        return len(self.loss_history)

    @property
    def initial_loss(self) -> float:
        return self.loss_history[0]


@dataclass
class DepthStack:
    """Observed images of one known object, labeled by object-space depth (µm)."""

    images: list[IntensityImage]
    depths_um: list[float]
    object: IntensityImage

    def __post_init__(self) -> None:
        if len(self.images) != len(self.depths_um):
            raise ContractError(f"{len(self.images)} images but {len(self.depths_um)} depths")
        if not self.images:
            raise ContractError("a depth stack needs at least one image")
        d = np.asarray(self.depths_um, dtype=float)
        if np.any(np.diff(d) <= 0):
            raise ContractError("depths must be strictly increasing")

    def subset(self, depths: Sequence[float]) -> DepthStack:
        idx = [self.depths_um.index(d) for d in depths]
        return DepthStack([self.images[i] for i in idx], [self.depths_um[i] for i in idx], self.object)


def stack_loss(model: MicroscopeModel, refs, obj: ConvOperand, depths, tape: Tape | None = None, gain=None):
    """Mean per-depth NMSE between references and synthesized images."""
    imgs = model.forward(obj, depths, tape=tape, gain=gain)
    return ad.mean([ad.nmse(r, im.values) for r, im in zip(refs, imgs)])


def calibrate(
    model: MicroscopeModel,
    observations: DepthStack,
    object: IntensityImage | None = None,
    cfg: AdamConfig | None = None,
    *,
    fit_gain: bool = True,
    param_metric: Callable[[MicroscopeModel], float] | None = None,
) -> CalibrationResult:
    """Fit ``model.params`` (and a free positive gain) to ``observations``.

    Runs forward -> mean NMSE -> backward -> Adam until ``cfg.max_iters``
    evaluations or until the best loss has not improved by a relative
    ``plateau_tol`` for ``plateau_patience`` iterations. The model is left
    holding the best parameters seen, which are also returned.
    """
    cfg = cfg or AdamConfig()
    obj = object if object is not None else observations.object
    op = ConvOperand(obj.array() if isinstance(obj, IntensityImage) else obj)
    refs = [im.array() for im in observations.images]
    depths = list(observations.depths_um)

    params = list(model.params.values())
    log_gain = TrainableParam("log_gain", np.float64(0.0), kind="scalar") if fit_gain else None
    opt_params = params + ([log_gain] if log_gain is not None else [])
    if not opt_params:
        raise ContractError("nothing to calibrate: the model has no trainable parameters")

    history: list[float] = []
    best = np.inf
    best_it = 0
    best_snap = {p.name: p.snapshot() for p in opt_params}
    stall = 0
    reason = "max_iters"
    for it in range(cfg.max_iters):
        tape = Tape()
        gain = ad.exp(tape.watch(log_gain)) if log_gain is not None else None
        for p in params:
            tape.watch(p)
        loss = stack_loss(model, refs, op, depths, tape=tape, gain=gain)
        lv = float(ad.value_of(loss))
        if not np.isfinite(lv):
            raise DivergenceError(it, lv)
        history.append(lv)

        if not np.isfinite(best) or best - lv > cfg.plateau_tol * best:
            stall = 0
        else:
            stall += 1
        if lv < best:
            best, best_it = lv, it
            best_snap = {p.name: p.snapshot() for p in opt_params}
        if stall >= cfg.plateau_patience:
            reason = "plateau"
            break
        if it == cfg.max_iters - 1:
            break
        ad.backward(loss)
        adam_step(opt_params, cfg)

    for p in opt_params:
        p.values = best_snap[p.name]
    g = float(np.exp(log_gain.values)) if log_gain is not None else None
    final = float(stack_loss(model, refs, op, depths, gain=g))
    log.debug("calibration stopped (%s) after %d evaluations, best %.3e at %d", reason, len(history), best, best_it)
    return CalibrationResult(
        final_params={p.name: p.snapshot() for p in opt_params},
        loss_history=history,
        image_nmse=final,
        param_nmse=param_metric(model) if param_metric is not None else None,
        best_iteration=best_it,
        stop_reason=reason,
        gain=g if g is not None else 1.0,
    )
