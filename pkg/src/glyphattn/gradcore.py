"""Dense float64 tensors with tape-based reverse-mode autodiff, Adam, and a
central finite-difference gradient oracle.

Usage::

    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape)

Operations record onto the innermost active tape whenever one of their inputs
requires grad. Outside a tape, operations are plain numpy evaluations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "DimensionError",
    "TapeError",
    "tensor",
    "matmul",
    "softmax_rows",
    "backward",
    "adam_step",
    "finite_diff_grad",
    "rel_error",
    "take_rows",
    "depthwise_conv3x3",
    "custom_op",
    "zero_grad",
]


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def clip(self, lo: float, hi: float):
        return clip(self, lo, hi)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive operations.

    Recording order is a topological order, so backward walks it in reverse.
    A tape supports exactly one backward pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self.cleared = False
        self._produced: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        if self.cleared or self.consumed:
            raise TapeError("cannot record onto a used tape")
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        self._produced[id(out)] = len(self.nodes)
        self.nodes.append(_Node(out, inputs, vjp))

    def clear(self) -> None:
        self.nodes = []
        self._produced = {}
        self.cleared = True

    def __len__(self) -> int:
        return len(self.nodes)


def custom_op(out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap a numpy result as a tape node.

    ``vjp(grad_out)`` returns one gradient (or None) per input.
    """
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = needs and tape is not None
    if out.requires_grad:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return custom_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    ra, rb = a.requires_grad, b.requires_grad
    return custom_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return custom_op(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return custom_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a plain matrix shared
    across the batch or has the same batch axes as ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (b.ndim > 2 and b.shape[:-2] != a.shape[:-2]):
        raise DimensionError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # shared weight matrix: fold batch axes into one gemm
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def vjp(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            return ga, (a2.T @ g2 if b.requires_grad else None)

        return custom_op(out, (a, b), vjp)

    def vjp(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return custom_op(ad @ bd, (a, b), vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return custom_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return custom_op(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return custom_op(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return custom_op(p, (x,), vjp)


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather ``table[idx]`` (embedding lookup); gradient scatters back with add."""
    idx = np.asarray(idx, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    return custom_op(table.data[idx], (table,), vjp)


def depthwise_conv3x3(x: Tensor, k: Tensor) -> Tensor:
    """Per-channel 3x3 correlation with zero padding.

    x: (B, H, W, C), k: (3, 3, C) -> (B, H, W, C).
    """
    if x.ndim != 4 or k.shape != (3, 3, x.shape[-1]):
        raise DimensionError(f"depthwise_conv3x3: bad shapes {x.shape}, {k.shape}")
    b, h, w, c = x.shape
    # (W, C) flattened so a column shift is a contiguous offset of C
    xp = np.zeros((b, h + 2, (w + 2) * c))
    xp.reshape(b, h + 2, w + 2, c)[:, 1:-1, 1:-1] = x.data
    kt = np.tile(k.data, (1, 1, w))
    out = np.zeros((b, h, w * c))
    tmp = np.empty_like(out)
    for i in range(3):
        for j in range(3):
            np.multiply(xp[:, i : i + h, j * c : (j + w) * c], kt[i, j], out=tmp)
            out += tmp

    def vjp(g):
        g = g.reshape(b, h, w * c)
        gk = None
        if k.requires_grad:
            gk = np.empty((3, 3, c))
            for i in range(3):
                for j in range(3):
                    s = np.einsum("bhx,bhx->x", xp[:, i : i + h, j * c : (j + w) * c], g)
                    gk[i, j] = s.reshape(w, c).sum(axis=0)
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            t = np.empty_like(g)
            for i in range(3):
                for j in range(3):
                    np.multiply(g, kt[i, j], out=t)
                    gxp[:, i : i + h, j * c : (j + w) * c] += t
            gx = gxp.reshape(b, h + 2, w + 2, c)[:, 1:-1, 1:-1]
        return gx, gk

    return custom_op(out.reshape(b, h, w, c), (x, k), vjp)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every requires-grad tensor reached from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays. The tape is consumed.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.cleared:
        raise TapeError("backward on a cleared tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if id(loss) not in tape._produced:
        raise TapeError("loss was not recorded on this tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    last = tape._produced[id(loss)]
    for node in reversed(tape.nodes[: last + 1]):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in tape._produced:
                leaves[key] = inp
    for key, t in leaves.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    A missing gradient counts as zero.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: params, grads and moments differ in count")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def finite_diff_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central differences of a scalar function, one coordinate at a time.

    ``f`` may return a float or a one-element Tensor. ``x`` is restored.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def val(r):
        return r.item() if isinstance(r, Tensor) else float(r)

    flat = x.data.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = val(f(x))
        flat[i] = orig - h
        fm = val(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(x.shape))


def rel_error(a, b) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|+|b|, tiny)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)
