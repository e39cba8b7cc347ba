"""Dense float64 tensors with a reverse-mode differentiation tape.

Everything is row-major numpy float64. Primitives validate shapes eagerly and,
while a ``Tape`` is active, record a backward rule whenever the result is
connected to a tensor that requires gradients. Gradients accumulate additively
(``+=`` semantics) into every ``requires_grad`` leaf; callers zero them
between optimization steps.

Frozen parameters (``requires_grad=False``) never receive a gradient, but
gradients still flow *through* operations that use them whenever some other
input is connected to the graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DomainError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

# Stack of active tapes; the innermost one records.
_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Entries are appended in execution order, so inputs always precede their
    consumers; walking the list in reverse is a valid reverse topological
    traversal.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, out: Tensor) -> None:
        """Accumulate d(out)/d(leaf) into every requires_grad leaf.

        Repeated calls without zeroing keep adding.
        """
        if out.data.size != 1:
            raise ContractError(
                f"backward requires a scalar output, got shape {out.data.shape}"
            )
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        keep: dict[int, Tensor] = {id(out): out}
        for node, inputs, bw in reversed(self._entries):
            g = grads.pop(id(node), None)
            keep.pop(id(node), None)
            if g is None:
                continue
            for t, gi in zip(inputs, bw(g)):
                if gi is None:
                    continue
                if t.requires_grad:
                    t.grad = gi if t.grad is None else t.grad + gi
                elif t._tape is self:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                        keep[key] = t
        if out.requires_grad:
            # y = x with x a leaf: the seed itself is the gradient.
            out.grad = np.ones_like(out.data) if out.grad is None else out.grad + 1.0


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _active() -> "Tape | None":
    return _ACTIVE[-1] if _ACTIVE else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], make_backward) -> Tensor:
    tape = _active()
    if tape is None:
        return out
    needs = tuple(t.requires_grad or t._tape is tape for t in inputs)
    if not any(needs):
        return out
    out._tape = tape
    tape._entries.append((out, inputs, make_backward(needs)))
    return out


def custom_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Extension hook for fused primitives.

    ``backward(g)`` must return one gradient array (or None) per input.
    """
    return _record(Tensor(out_data), tuple(inputs), lambda needs: backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    ash, bsh = a.data.shape, b.data.shape

    def make(needs):
        def bw(g):
            return (
                _unbroadcast(g, ash) if needs[0] else None,
                _unbroadcast(g, bsh) if needs[1] else None,
            )

        return bw

    return _record(out, (a, b), make)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    ash, bsh = a.data.shape, b.data.shape

    def make(needs):
        def bw(g):
            return (
                _unbroadcast(g, ash) if needs[0] else None,
                _unbroadcast(-g, bsh) if needs[1] else None,
            )

        return bw

    return _record(out, (a, b), make)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    ad_, bd_ = a.data, b.data

    def make(needs):
        def bw(g):
            return (
                _unbroadcast(g * bd_, ad_.shape) if needs[0] else None,
                _unbroadcast(g * ad_, bd_.shape) if needs[1] else None,
            )

        return bw

    return _record(out, (a, b), make)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)
    ad_, bd_ = a.data, b.data

    def make(needs):
        def bw(g):
            return (
                _unbroadcast(g / bd_, ad_.shape) if needs[0] else None,
                _unbroadcast(-g * ad_ / (bd_ * bd_), bd_.shape) if needs[1] else None,
            )

        return bw

    return _record(out, (a, b), make)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda needs: lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """np.matmul semantics on stacked matrices; both operands must be >= 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul requires >=2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} vs {b.data.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))
    ad_, bd_ = a.data, b.data

    def make(needs):
        def bw(g):
            ga = gb = None
            if needs[0]:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(bd_, -1, -2)), ad_.shape)
            if needs[1]:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad_, -1, -2), g), bd_.shape)
            return ga, gb

        return bw

    return _record(out, (a, b), make)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for shape {a.data.shape}")
    out = Tensor(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))
    return _record(out, (a,), lambda needs: lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} to {shape}")
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape
    return _record(out, (a,), lambda needs: lambda g: (g.reshape(orig),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; every other extent must agree."""
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    ndim = xs[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat axis {axis} out of range for ndim {ndim}")
    axis = axis % ndim
    base = list(xs[0].data.shape)
    for x in xs[1:]:
        other = list(x.data.shape)
        if len(other) != ndim or any(
            i != axis and other[i] != base[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat shapes incompatible off axis {axis}: "
                f"{xs[0].data.shape} vs {x.data.shape}"
            )
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    extents = [x.data.shape[axis] for x in xs]

    def make(needs):
        def bw(g):
            grads = []
            start = 0
            for need, ext in zip(needs, extents):
                sl = [slice(None)] * ndim
                sl[axis] = slice(start, start + ext)
                grads.append(g[tuple(sl)] if need else None)
                start += ext
            return tuple(grads)

        return bw

    return _record(out, tuple(xs), make)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"narrow axis {axis} out of range for ndim {ndim}")
    axis = axis % ndim
    if start < 0 or length < 1 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}, {start + length}) invalid for extent "
            f"{a.data.shape[axis]}"
        )
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(a.data[sl])
    orig = a.data.shape

    def make(needs):
        def bw(g):
            full = np.zeros(orig)
            full[sl] = g
            return (full,)

        return bw

    return _record(out, (a,), make)


def expand_front(a, reps: int) -> Tensor:
    """Tile a tensor along a new leading axis; backward sums it away."""
    a = _as_tensor(a)
    if reps < 1:
        raise ShapeError(f"expand_front needs reps >= 1, got {reps}")
    out = Tensor(np.broadcast_to(a.data, (reps,) + a.data.shape).copy())
    return _record(out, (a,), lambda needs: lambda g: (g.sum(axis=0),))


def gelu(a) -> Tensor:
    """tanh-approximate GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    out = Tensor(0.5 * x * (1.0 + t))

    def make(needs):
        def bw(g):
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (
                1.0 + 3.0 * _GELU_A * x * x
            )
            return (g * local,)

        return bw

    return _record(out, (a,), make)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)
    return _record(out, (a,), lambda needs: lambda g: (g * s * (1.0 - s),))


def activation(kind: str, x) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation kind: {kind!r}")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e)
    return _record(out, (a,), lambda needs: lambda g: (g * e,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    d = a.data
    return _record(out, (a,), lambda needs: lambda g: (g / d,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    r = np.sqrt(a.data)
    out = Tensor(r)

    def make(needs):
        def bw(g):
            # The derivative is unbounded at 0; the guard only matters there.
            return (g * 0.5 / np.maximum(r, 1e-300),)

        return bw

    return _record(out, (a,), make)


def maximum_const(a, c: float) -> Tensor:
    """Elementwise max(x, c); gradient passes only where x > c."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, c))
    mask = a.data > c
    return _record(out, (a,), lambda needs: lambda g: (g * mask,))


def softmax(a, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Stable softmax of logits/temperature along ``axis``."""
    a = _as_tensor(a)
    if not temperature > 0:
        raise DomainError(f"softmax temperature must be > 0, got {temperature}")
    z = a.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def make(needs):
        def bw(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return ((g - dot) * y / temperature,)

        return bw

    return _record(out, (a,), make)


def _check_axis(ndim: int, axis: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op} axis {axis} out of range for ndim {ndim}")
    return axis % ndim


def mean(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(a.data.ndim, axis, "mean")
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    k = a.data.shape[axis]
    shape = a.data.shape

    def make(needs):
        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / k, shape).copy(),)

        return bw

    return _record(out, (a,), make)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis(a.data.ndim, axis, "sum")
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def make(needs):
        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return bw

    return _record(out, (a,), make)


def circular_conv(a, b) -> Tensor:
    """Circular convolution along the last axis: out_k = sum_j a_j * b_{(k-j) mod n}.

    Equivalent to multiplying by the circulant matrix of ``a``; computed via
    real FFTs, which matches the direct product to well below 1e-9 at the
    sizes used here.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"circular_conv operands must share a shape: {a.data.shape} vs {b.data.shape}"
        )
    n = a.data.shape[-1]
    if n < 1:
        raise ShapeError("circular_conv needs at least one element")
    fa = np.fft.rfft(a.data, axis=-1)
    fb = np.fft.rfft(b.data, axis=-1)
    out_data = np.fft.irfft(fa * fb, n=n, axis=-1)

    def backward(g):
        fg = np.fft.rfft(g, axis=-1)
        ga = np.fft.irfft(fg * np.conj(fb), n=n, axis=-1)
        gb = np.fft.irfft(fg * np.conj(fa), n=n, axis=-1)
        return ga, gb

    return custom_op(out_data, (a, b), backward)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: int
    analytic: float
    numeric: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check_params(
    forward: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``forward()`` against central differences.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-3), i.e.
    near-zero coordinates are compared absolutely, so central-difference
    round-off noise (~1e-11 * |f|) cannot fail an exactly-zero gradient while
    any real backward-rule error still exceeds the tolerance by orders of
    magnitude. When ``sample`` is set, at most that many coordinates per
    tensor are checked (chosen by a seeded RNG).
    """
    with Tape() as tape:
        y = forward()
        if y.data.size != 1:
            raise ContractError("grad_check target must be scalar-valued")
        tape.backward(y)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for p in params.values():
        p.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, "", -1, 0.0, 0.0, 0, tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        if sample is not None and size > sample:
            idxs = np.sort(rng.choice(size, size=sample, replace=False))
        else:
            idxs = np.arange(size)
        ana_flat = analytic[name].reshape(-1)
        for i in idxs:
            v = flat[i]
            flat[i] = v + h
            f_plus = float(forward().data)
            flat[i] = v - h
            f_minus = float(forward().data)
            flat[i] = v
            num = (f_plus - f_minus) / (2.0 * h)
            ana = float(ana_flat[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-3)
            report.n_checked += 1
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst_param = name
                report.worst_index = int(i)
                report.analytic = ana
                report.numeric = num
    return report


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Single-tensor convenience wrapper around grad_check_params."""
    return grad_check_params(lambda: f(x), {"x": x}, h=h, tol=tol, sample=sample, seed=seed)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
