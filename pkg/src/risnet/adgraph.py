"""Small reverse-mode autodiff engine over dense float64 tensors.

Complex quantities are carried as a pair of real tensors so that every
derivative is an ordinary real derivative. Gradients are recorded only while
a :class:`GradTape` is active; operations outside a tape produce plain
constants, which is how detached forward passes are expressed.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError", "ContractError", "NumericError",
    "Tensor", "ComplexTensor", "GradTape",
    "tensor", "constant", "affine", "relu", "reduce", "expand", "concat",
    "take", "narrow", "scatter", "reshape", "add", "sub", "mul", "scale", "add_scalar",
    "div", "log", "cos", "sin", "square",
    "cadd", "cmul", "cmatmul", "cabs2", "unit_phasor",
    "backward", "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericError(ArithmeticError):
    """A computation produced or would produce a non-finite value."""


_local = threading.local()


def _active_tape() -> "GradTape | None":
    return getattr(_local, "tape", None)


class Tensor:
    """Dense real tensor, row-major, float64.

    ``requires_grad`` marks a leaf whose gradient should be accumulated.
    Interior nodes created on a tape track gradients whenever any parent does.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_owns_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._owns_grad = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; every operator routes through a recorded op
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


class ComplexTensor:
    """Pair of real tensors ``re + j*im`` with identical shapes."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if not isinstance(re, Tensor):
            re = Tensor(re)
        if not isinstance(im, Tensor):
            im = Tensor(im)
        if re.shape != im.shape:
            raise DimensionError(f"real part {re.shape} and imaginary part {im.shape} differ")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, z) -> "ComplexTensor":
        z = np.asarray(z, dtype=np.complex128)
        return cls(Tensor(z.real), Tensor(z.imag))

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape})"


class GradTape:
    """Ordered record of differentiable operations.

    Use as a context manager; nodes are appended in creation order, which is
    a topological order of the graph by construction.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._prev = None

    def __enter__(self) -> "GradTape":
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        backward(loss, tape=self)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    """Wrap an op result; record it when a tape is active and grads flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._owns_grad = False
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        tape.record(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # incoming arrays may be shared or read-only views: never write into one
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
        t._owns_grad = False
    elif t._owns_grad:
        t.grad += g
    else:
        t.grad = t.grad + g
        t._owns_grad = True


def _accum_slice(t: Tensor, sel: tuple, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.shape)
    elif not t._owns_grad:
        t.grad = np.array(t.grad)
    t._owns_grad = True
    t.grad[sel] += g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# real operations
# ---------------------------------------------------------------------------

def affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``.

    ``W`` is ``(Q, P)``, ``b`` is ``(Q,)`` and ``x`` is ``(..., P)``.
    """
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.ndim < 1 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: W {W.shape}, x {x.shape}, b {b.shape} do not conform")
    xd = x.data
    out = xd @ W.data.T + b.data

    def fn(g):
        if x.requires_grad:
            _accum(x, g @ W.data)
        if W.requires_grad:
            _accum(W, g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1]))
        if b.requires_grad:
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out, (W, x, b), fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the derivative at exactly zero is taken as 0."""
    out = np.maximum(x.data, 0.0)

    def fn(g):
        # out > 0 iff x > 0, so the input array need not be kept alive
        _accum(x, g * (out > 0.0))

    return _make(out, (x,), fn)


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def reduce(x: Tensor, axis: int, mode: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum or mean along one axis."""
    axis = _check_axis(x, axis)
    if mode not in ("sum", "mean"):
        raise ContractError(f"unknown reduction mode {mode!r}")
    n = x.shape[axis]
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if mode == "mean":
        out = out / n
    shape = x.shape

    def fn(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        if mode == "mean":
            gk = gk / n
        _accum(x, np.broadcast_to(gk, shape))

    return _make(out, (x,), fn)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes to ``shape``; the adjoint of a keepdims sum."""
    shape = tuple(shape)
    if len(shape) != x.ndim or any(s != d and s != 1 for s, d in zip(x.shape, shape)):
        raise DimensionError(f"cannot expand {x.shape} to {shape}")
    axes = tuple(i for i, (s, d) in enumerate(zip(x.shape, shape)) if s != d)
    out = np.broadcast_to(x.data, shape)

    def fn(g):
        _accum(x, g.sum(axis=axes, keepdims=True) if axes else g)

    return _make(out, (x,), fn)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ContractError("concat of nothing")
    axis = _check_axis(xs[0], axis)
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def fn(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(out, tuple(xs), fn)


def take(x: Tensor, index, axis: int) -> Tensor:
    """Gather entries of ``x`` along ``axis`` at integer positions ``index``."""
    axis = _check_axis(x, axis)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[axis]):
        raise ContractError(f"take: index out of range for axis of length {x.shape[axis]}")
    out = np.take(x.data, index, axis=axis)
    shape = x.shape

    def fn(g):
        gx = np.zeros(shape)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index.reshape(-1),
                  np.moveaxis(g, list(range(axis, axis + index.ndim)),
                              list(range(index.ndim))).reshape((-1,) + moved.shape[1:]))
        _accum(x, gx)

    return _make(out, (x,), fn)


def narrow(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    axis = _check_axis(x, axis)
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"narrow [{start}, {stop}) out of range for axis of length {x.shape[axis]}")
    sel = [slice(None)] * x.ndim
    sel[axis] = slice(start, stop)
    sel = tuple(sel)
    shape = x.shape

    def fn(g):
        _accum_slice(x, sel, g)

    return _make(x.data[sel], (x,), fn)


def scatter(x: Tensor, index, length: int, axis: int) -> Tensor:
    """Place slices of ``x`` along ``axis`` at positions ``index`` of a zero tensor.

    ``index`` must be a permutation-free (distinct) list, one entry per slice.
    """
    axis = _check_axis(x, axis)
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1 or index.shape[0] != x.shape[axis]:
        raise DimensionError(f"scatter: {index.shape[0]} positions for axis of length {x.shape[axis]}")
    if len(np.unique(index)) != len(index) or index.min() < 0 or index.max() >= length:
        raise ContractError("scatter positions must be distinct and in range")
    shape = list(x.shape)
    shape[axis] = length
    out = np.zeros(shape)
    sel = [slice(None)] * x.ndim
    sel[axis] = index
    out[tuple(sel)] = x.data

    def fn(g):
        _accum(x, g[tuple(sel)])

    return _make(out, (x,), fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(str(err)) from None

    def fn(g):
        _accum(x, g.reshape(old))

    return _make(out, (x,), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def fn(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def fn(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        if a.requires_grad:
            _accum(a, g * bd)
        if b.requires_grad:
            _accum(b, g * ad)

    return _make(ad * bd, (a, b), fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def fn(g):
        _accum(x, g * c)

    return _make(x.data * c, (x,), fn)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def fn(g):
        _accum(x, g)

    return _make(x.data + float(c), (x,), fn)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def fn(g):
        _accum(x, 2.0 * g * xd)

    return _make(xd * xd, (x,), fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient; a zero or non-finite denominator raises."""
    _same_shape(a, b, "div")
    bd = b.data
    if not np.all(np.isfinite(bd)) or np.any(bd == 0.0):
        raise NumericError("div: denominator is zero or non-finite")
    out = a.data / bd

    def fn(g):
        if a.requires_grad:
            _accum(a, g / bd)
        if b.requires_grad:
            _accum(b, -g * out / bd)

    return _make(out, (a, b), fn)


def log(x: Tensor) -> Tensor:
    """Natural log; only strictly positive inputs are accepted."""
    xd = x.data
    if not np.all(xd > 0.0) or not np.all(np.isfinite(xd)):
        raise NumericError("log: input must be finite and strictly positive")

    def fn(g):
        _accum(x, g / xd)

    return _make(np.log(xd), (x,), fn)


def cos(x: Tensor) -> Tensor:
    xd = x.data

    def fn(g):
        _accum(x, -g * np.sin(xd))

    return _make(np.cos(xd), (x,), fn)


def sin(x: Tensor) -> Tensor:
    xd = x.data

    def fn(g):
        _accum(x, g * np.cos(xd))

    return _make(np.sin(xd), (x,), fn)


# ---------------------------------------------------------------------------
# complex operations, expressed on (re, im) pairs
# ---------------------------------------------------------------------------

def cadd(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(add(a.re, b.re), add(a.im, b.im))


def cmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Elementwise complex product of equally shaped operands."""
    return ComplexTensor(sub(mul(a.re, b.re), mul(a.im, b.im)),
                         add(mul(a.re, b.im), mul(a.im, b.re)))


def _matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def fn(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(bd, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, (a, b), fn)


def cmatmul(A: ComplexTensor, B: ComplexTensor) -> ComplexTensor:
    """Complex matrix product over the last two axes.

    Leading (batch) axes must match exactly.
    """
    sa, sb = A.shape, B.shape
    if len(sa) < 2 or len(sb) < 2 or sa[:-2] != sb[:-2] or sa[-1] != sb[-2]:
        raise DimensionError(f"cmatmul: {sa} and {sb} do not conform")
    rr = _matmul(A.re, B.re)
    ii = _matmul(A.im, B.im)
    ri = _matmul(A.re, B.im)
    ir = _matmul(A.im, B.re)
    return ComplexTensor(sub(rr, ii), add(ri, ir))


def cabs2(z: ComplexTensor) -> Tensor:
    """Squared modulus ``re**2 + im**2``."""
    return add(square(z.re), square(z.im))


def unit_phasor(psi: Tensor) -> ComplexTensor:
    """``exp(j*psi)`` as ``(cos psi, sin psi)``."""
    return ComplexTensor(cos(psi), sin(psi))


# ---------------------------------------------------------------------------
# reverse pass and gradient checking
# ---------------------------------------------------------------------------

def _topo_order(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, tape: GradTape | None = None) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every tracked leaf.

    With a tape the recorded creation order is replayed in reverse; without
    one the graph is sorted from ``loss``. Interior gradients are released
    as soon as they have been propagated.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if tape is not None:
        live = {id(n) for n in _topo_order(loss)}
        order = [n for n in tape.nodes if id(n) in live]
    else:
        order = [n for n in _topo_order(loss) if n._backward is not None]
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        g = node.grad
        node._backward(g)
        node.grad = None
    # the loss itself is interior; leave a unit gradient for inspection
    if loss._backward is not None:
        loss.grad = np.ones_like(loss.data)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
               coords: Iterable[int] | None = None, kink_rtol: float = 1e-3):
    """Compare the reverse-mode gradient of scalar ``f`` with central differences.

    Returns the maximum relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`` over the
    checked coordinates, as a float carrying a ``kinks`` list.

    A coordinate is treated as sitting on a kink (e.g. a relu input at exactly
    zero) when its forward and backward one-sided slopes disagree by more than
    ``kink_rtol`` relative; such coordinates are reported in ``kinks`` and
    left out of the maximum.
    """
    base = np.array(x.data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with GradTape() as tape:
        out = f(leaf)
    f0 = out.item()
    if not math.isfinite(f0):
        raise NumericError("grad_check: f is not finite at x")
    tape.backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    flat = analytic.reshape(-1)
    if coords is None:
        coords = range(base.size)
    worst = 0.0
    kinks = []
    for k in coords:
        vals = []
        for step in (eps, -eps):
            pert = base.copy()
            pert.reshape(-1)[k] += step
            v = f(Tensor(pert)).item()
            if not math.isfinite(v):
                raise NumericError(f"grad_check: f not finite at coordinate {k} perturbed by {step}")
            vals.append(v)
        fwd = (vals[0] - f0) / eps
        bwd = (f0 - vals[1]) / eps
        noise = 1e-9 * (1.0 + abs(f0)) / eps
        if abs(fwd - bwd) > kink_rtol * max(abs(fwd), abs(bwd)) + noise:
            kinks.append(int(k))
            continue
        numeric = (vals[0] - vals[1]) / (2 * eps)
        a = float(flat[k])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return GradCheckResult(worst, kinks)


class GradCheckResult(float):
    """Maximum relative error, with the coordinates excluded as kinks."""

    kinks: list[int]

    def __new__(cls, value: float, kinks: list[int]):
        obj = super().__new__(cls, value)
        obj.kinks = kinks
        return obj
