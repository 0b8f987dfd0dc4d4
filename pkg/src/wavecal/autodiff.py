"""Tape-based reverse-mode differentiation over real and complex grids.

Gradient convention: for a real loss ``L`` and a complex quantity
``z = x + j y`` the stored gradient is ``dL/dx + j dL/dy``. With that
convention a complex-linear map ``y = A z`` pulls a cotangent back as
``A^H g`` and a product ``y = z * c`` as ``g * conj(c)``. Real-valued inputs
keep only the real part of whatever arrives.

Every primitive accepts plain ndarrays as well as :class:`Var`; when none of
its inputs is a ``Var`` it just returns the ndarray result and records
nothing, so the optics blocks double as ordinary numeric functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import field as fc
from .errors import ContractError, DegenerateReferenceError, DimensionError, TapeStateError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass(eq=False)
class TrainableParam:
    """A named real grid the optimizer may update.

    ``values`` has shape ``(n, n)`` for phase grids, ``(2, n, n)`` for the
    real/imaginary planes of a complex field, or ``()`` for scalars.
    ``kind`` selects the learning rate (``"phase"``, ``"field"``,
    ``"scalar"``); ``bounds`` clamps values after every optimizer step.
    """

    name: str
    values: np.ndarray
    kind: str = "phase"
    bounds: tuple[float, float] | None = None
    grad: np.ndarray = field(init=False)
    adam_state: AdamState = field(init=False)
    grad_ready: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ContractError(f"parameter {self.name!r} has non-finite values")
        self.grad = np.zeros_like(self.values)
        self.adam_state = AdamState(np.zeros_like(self.values), np.zeros_like(self.values))

    def snapshot(self) -> np.ndarray:
        return self.values.copy()

    def as_complex(self) -> np.ndarray:
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise DimensionError(f"parameter {self.name!r} is not a real/imag pair")
        return self.values[0] + 1j * self.values[1]

    @classmethod
    def from_complex(cls, name: str, z: np.ndarray, **kw) -> TrainableParam:
        return cls(name, np.stack([z.real, z.imag]), kind="field", **kw)


class _Node:
    __slots__ = ("inputs", "vjp", "is_real", "param")

    def __init__(self, inputs, vjp, is_real, param=None):
        self.inputs = inputs
        self.vjp = vjp
        self.is_real = is_real
        self.param = param


class Tape:
    """Append-only record of one forward pass; supports a single backward."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.params: list[TrainableParam] = []
        self.consumed = False
        self._memo: dict[tuple, Var] = {}

    def _push(self, value, inputs, vjp, param=None) -> Var:
        if self.consumed:
            raise TapeStateError("tape already consumed by backward; run a fresh forward")
        is_real = not np.iscomplexobj(value)
        self.nodes.append(_Node(tuple(v.id for v in inputs), vjp, is_real, param))
        return Var(self, len(self.nodes) - 1, value)

    def watch(self, param: TrainableParam) -> Var:
        """Leaf variable whose gradient lands in ``param.grad``."""
        for i, n in enumerate(self.nodes):
            if n.param is param:
                return Var(self, i, param.values)
        self.params.append(param)
        return self._push(param.values.copy(), (), None, param=param)


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "id", "value")
    __array_priority__ = 100

    def __init__(self, tape: Tape, id: int, value: np.ndarray):
        self.tape = tape
        self.id = id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.value.shape}, dtype={self.value.dtype})"


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ContractError("operands live on different tapes")
            tape = x.tape
    return tape


def _apply(value, inputs: Sequence, vjp: Callable, memo_key: tuple | None = None):
    """Record ``value`` if any input is a Var; ``vjp(g)`` returns one cotangent
    per input (``None`` for constants)."""
    tape = _tape_of(*inputs)
    if tape is None:
        return value
    vars_ = [x for x in inputs if isinstance(x, Var)]
    mask = [isinstance(x, Var) for x in inputs]

    def vjp_vars(g):
        cts = vjp(g)
        return [ct for ct, m in zip(cts, mask) if m]

    out = tape._push(value, vars_, vjp_vars)
    if memo_key is not None:
        tape._memo[memo_key] = out
    return out


def _memo(name: str, x, *extra):
    if isinstance(x, Var):
        key = (name, x.id) + extra
        return key, x.tape._memo.get(key)
    return None, None


def _same_shape(a, b) -> None:
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if sa != sb and sa != () and sb != ():
        raise DimensionError(f"shape mismatch: {sa} vs {sb}")


def _reduce_to(ct, shape):
    if np.shape(ct) != shape:
        ct = np.sum(ct)
    return ct


# ---------------------------------------------------------------- primitives


def fft2(x):
    key, hit = _memo("fft2", x)
    if hit is not None:
        return hit
    xv = value_of(x)
    n = xv.shape[-1]
    return _apply(fc.fft2_centered(xv), [x], lambda g: [n * n * fc.ifft2_centered(g)], key)


def ifft2(x):
    xv = value_of(x)
    n = xv.shape[-1]
    return _apply(fc.ifft2_centered(xv), [x], lambda g: [fc.fft2_centered(g) / (n * n)])


def pad(x, new_side: int):
    key, hit = _memo("pad", x, new_side)
    if hit is not None:
        return hit
    n = value_of(x).shape[-1]
    return _apply(fc.pad_center(value_of(x), new_side), [x], lambda g: [fc.crop_center(g, n)], key)


def crop(x, new_side: int):
    n = value_of(x).shape[-1]
    return _apply(fc.crop_center(value_of(x), new_side), [x], lambda g: [fc.pad_center(g, n)])


def cmul(a, b):
    """Elementwise product; either side may be a scalar."""
    _same_shape(a, b)
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    need_a, need_b = isinstance(a, Var), isinstance(b, Var)

    def vjp(g):
        return [
            _reduce_to(g * np.conj(bv), sa) if need_a else None,
            _reduce_to(g * np.conj(av), sb) if need_b else None,
        ]

    return _apply(av * bv, [a, b], vjp)


def add(a, b):
    _same_shape(a, b)
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    return _apply(value_of(a) + value_of(b), [a, b], lambda g: [_reduce_to(g, sa), _reduce_to(g, sb)])


def scale(a, c: float):
    """Multiply by a real constant."""
    return _apply(value_of(a) * c, [a], lambda g: [g * c])


def cexp_j(phi):
    """``exp(j*phi)`` for real ``phi``."""
    pv = value_of(phi)
    if np.iscomplexobj(pv):
        raise ContractError("cexp_j expects a real phase grid")
    e = np.exp(1j * pv)
    return _apply(e, [phi], lambda g: [np.real(np.conj(g) * 1j * e)])


def abs2(u):
    uv = value_of(u)
    return _apply(np.real(uv * np.conj(uv)), [u], lambda g: [2 * g * uv])


def exp(x):
    e = np.exp(value_of(x))
    return _apply(e, [x], lambda g: [g * e])


def total(x):
    xv = value_of(x)
    return _apply(np.sum(xv), [x], lambda g: [np.full(xv.shape, g, dtype=np.result_type(g, xv))])


def as_complex(pair):
    """``pair[0] + j*pair[1]`` for a ``(2, n, n)`` real stack."""
    pv = value_of(pair)
    if pv.ndim != 3 or pv.shape[0] != 2:
        raise DimensionError(f"expected a (2, n, n) real/imag stack, got {pv.shape}")
    return _apply(pv[0] + 1j * pv[1], [pair], lambda g: [np.stack([np.real(g), np.imag(g)])])


def normalize_sum(h):
    """``h / sum(h)`` for a real grid with positive sum."""
    hv = value_of(h)
    s = float(np.sum(hv))
    if not s > 0:
        raise ContractError("cannot normalize a grid with non-positive sum")

    def vjp(g):
        return [g / s - np.sum(g * hv) / (s * s)]

    return _apply(hv / s, [h], vjp)


class ConvOperand:
    """A constant real image prepared for repeated linear convolution."""

    def __init__(self, o: np.ndarray):
        o = np.asarray(o, dtype=float)
        fc._check_square_even(o)
        self.n = o.shape[0]
        self.image = o
        self.spectrum = fc.rfft2_centered(fc.pad_center(o, 2 * self.n))

    def apply(self, h: np.ndarray) -> np.ndarray:
        n = self.n
        H = fc.rfft2_centered(fc.pad_center(h, 2 * n))
        return fc.crop_center(fc.irfft2_centered(H * self.spectrum, 2 * n), n)

    def apply_adjoint(self, g: np.ndarray) -> np.ndarray:
        n = self.n
        G = fc.rfft2_centered(fc.pad_center(g, 2 * n))
        return fc.crop_center(fc.irfft2_centered(G * np.conj(self.spectrum), 2 * n), n)


def conv2_fft(h, o):
    """Linear convolution of real ``h`` with the constant ``o``, cropped to ``n``.

    The sample at index ``n // 2`` of ``o`` acts as the origin, so a centered
    unit impulse leaves ``h`` unchanged.
    """
    op = o if isinstance(o, ConvOperand) else ConvOperand(o)
    hv = value_of(h)
    if np.iscomplexobj(hv):
        raise ContractError("conv2_fft expects a real grid")
    if hv.shape != (op.n, op.n):
        raise DimensionError(f"shape mismatch: {hv.shape} vs {(op.n, op.n)}")
    return _apply(op.apply(hv), [h], lambda g: [op.apply_adjoint(np.real(g))])


def nmse(ref, k):
    """``||ref - k||^2 / ||ref||^2``; differentiable in both arguments."""
    _same_shape(ref, k)
    rv, kv = np.asarray(value_of(ref), dtype=float), value_of(k)
    denom = float(np.sum(rv * rv))
    if denom == 0:
        raise DegenerateReferenceError("nmse reference has zero norm")
    diff = rv - kv
    num = float(np.sum(diff * diff))

    need_ref = isinstance(ref, Var)

    def vjp(g):
        dk = -2 * g * diff / denom
        dref = 2 * g * diff / denom - 2 * g * num * rv / denom**2 if need_ref else None
        return [dref, dk]

    return _apply(np.float64(num / denom), [ref, k], vjp)


def mean(xs: Sequence):
    acc = xs[0]
    for x in xs[1:]:
        acc = add(acc, x)
    return scale(acc, 1.0 / len(xs))


# ------------------------------------------------------------------ backward


def backward(loss: Var) -> None:
    """Sweep the tape in reverse and write gradients into watched parameters.

    Gradients are overwritten (not accumulated across calls); the tape cannot
    be reused afterwards.
    """
    if not isinstance(loss, Var):
        raise ContractError("backward needs a recorded Var; the loss does not depend on any parameter")
    lv = np.asarray(loss.value)
    if lv.shape != () or np.iscomplexobj(lv):
        raise ContractError(f"loss must be a real scalar, got shape {lv.shape} dtype {lv.dtype}")
    tape = loss.tape
    if tape.consumed:
        raise TapeStateError("backward already ran on this tape")
    tape.consumed = True

    for p in tape.params:
        p.grad = np.zeros_like(p.values)
        p.grad_ready = True

    grads: dict[int, np.ndarray] = {loss.id: np.float64(1.0)}
    for i in range(loss.id, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.param is not None:
            node.param.grad = node.param.grad + np.real(g)
            continue
        for inp, ct in zip(node.inputs, node.vjp(g)):
            if ct is None:
                continue
            if tape.nodes[inp].is_real:
                ct = np.real(ct)
            prev = grads.get(inp)
            grads[inp] = ct if prev is None else prev + ct
    tape._memo.clear()
