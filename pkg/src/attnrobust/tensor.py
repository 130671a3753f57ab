"""Dense float32 tensors with reverse-mode automatic differentiation.

Every operation records a node on the output tensor (its parents plus a
closure mapping the output gradient to parent gradients).  ``backward``
builds a :class:`Graph` in topological order, visits each node once and
then discards it.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "GraphError",
    "no_grad",
    "precision",
    "get_dtype",
    "tensor",
    "build_graph",
    "backward",
    "grad_check",
    "eval_op",
    "OPS",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


class GraphError(RuntimeError):
    """Raised on invalid backward requests (non-scalar or detached outputs)."""


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)


_state = _State()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the compute dtype (float32 by default)."""
    prev = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def get_dtype() -> np.dtype:
    return _state.dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state.dtype)
        if arr.dtype != (dtype or _state.dtype):
            arr = arr.astype(dtype or _state.dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op: str = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, inputs: Sequence["Tensor"] | None = None, retain_graph: bool = False) -> None:
        backward(self, inputs=inputs, retain_graph=retain_graph)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _arr(t: Tensor) -> np.ndarray:
    d = t.data
    return d if d.dtype == _state.dtype else d.astype(_state.dtype)


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``out``; attach a node when grad mode is on and a parent needs it."""
    result = Tensor(out)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        result.requires_grad = True
        result._parents = tuple(parents)
        result._backward = backward_fn
        result.op = op
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, *shapes) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op}: shapes {' and '.join(map(str, shapes))} do not broadcast") from None


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(_arr(a) + _arr(b), (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(_arr(a) - _arr(b), (a, b), bw, "sub")


def hadamard(a, b) -> Tensor:
    """Element-wise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("hadamard", a.shape, b.shape)
    av, bv = _arr(a), _arr(b)

    def bw(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(av * bv, (a, b), bw, "hadamard")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    av, bv = _arr(a), _arr(b)
    out = av / bv

    def bw(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return _make(out, (a, b), bw, "div")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make(_arr(a) * c, (a,), bw, "scale")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(_arr(a))

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw, "tanh")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(_arr(a))
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    av = _arr(a)
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(_arr(a))

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1), 0.0)
        return (g * d,)

    return _make(out, (a,), bw, "sqrt")


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient passes only where the input is strictly inside."""
    a = _as_tensor(a)
    if lo is not None and hi is not None and np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError(f"clamp: lo ({lo}) > hi ({hi})")
    av = _arr(a)
    out = np.clip(av, lo, hi)
    inside = np.ones(av.shape, dtype=bool)
    if lo is not None:
        inside &= av > lo
    if hi is not None:
        inside &= av < hi

    def bw(g):
        return (np.where(inside, g, 0.0),)

    return _make(out.astype(av.dtype, copy=False), (a,), bw, "clamp")


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = np.sum(_arr(a), axis=ax, keepdims=keepdims)

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    out = np.mean(_arr(a), axis=ax, keepdims=keepdims)

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out, (a,), bw, "mean")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = _arr(a).reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(_arr(a), axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def take(a, index, axis: int = -1) -> Tensor:
    """Gather along ``axis`` with an integer index array (``np.take_along_axis``)."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    if idx.ndim != a.ndim:
        raise ShapeError(f"take: index rank {idx.ndim} != tensor rank {a.ndim}")
    out = np.take_along_axis(_arr(a), idx, axis=axis)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np_idx = list(np.indices(idx.shape, sparse=True))
        np_idx[axis] = idx
        np.add.at(full, tuple(np_idx), g)
        return (full,)

    return _make(out, (a,), bw, "take")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([_arr(p) for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, parts, bw, "concat")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batched/broadcast semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: scalar operands not allowed, got {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2:
        _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    av, bv = _arr(a), _arr(b)
    out = np.matmul(av, bv)

    def bw(g):
        a2 = av[None, :] if a.ndim == 1 else av
        b2 = bv[:, None] if b.ndim == 1 else bv
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (ka,))
        if b.ndim == 1:
            gb = gb.reshape(gb.shape[:-2] + (kb,))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# Softmax family and norms
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    av = _arr(a)
    z = av - av.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def log_sum_exp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    av = _arr(a)
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    soft = e / s
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (a,), bw, "log_sum_exp")


def l2_norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis``; the subgradient at the origin is taken as zero."""
    a = _as_tensor(a)
    av = _arr(a)
    ax = _norm_axis(axis, a.ndim)
    nk = np.sqrt(np.sum(av * av, axis=ax, keepdims=True))
    out = nk if keepdims else np.squeeze(nk, axis=ax)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax) if ax is not None else np.reshape(g, (1,) * a.ndim)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, g * av / safe, 0.0),)

    return _make(np.asarray(out), (a,), bw, "l2_norm")


def cosine_sim(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis`` with broadcasting over the other axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[axis] != b.shape[axis]:
        raise ShapeError(f"cosine_sim: feature dims differ, shapes {a.shape} and {b.shape}")
    _broadcast_shape("cosine_sim", a.shape, b.shape)
    dot = sum_(hadamard(a, b), axis=axis)
    return div(dot, hadamard(l2_norm(a, axis=axis), l2_norm(b, axis=axis)))


def normalize(a, axis: int = -1) -> Tensor:
    return div(a, l2_norm(a, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# Spatial ops
# ---------------------------------------------------------------------------

def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights, half-pixel centres, edge-clamped."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    step = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * step - 0.5
        src = min(max(src, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        m[i, i0] += 1.0 - w1
        m[i, i1] += w1
    return m


_interp_cache: dict[tuple[int, int], np.ndarray] = {}


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    key = (n_in, n_out)
    if key not in _interp_cache:
        _interp_cache[key] = _interp_matrix(n_in, n_out)
    return _interp_cache[key]


def bilinear_resize(a, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (align-corners-false convention)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"bilinear_resize: need at least 2 dims, got {a.shape}")
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"bilinear_resize: output size must be positive, got {(out_h, out_w)}")
    dt = _state.dtype
    rh = interp_matrix(a.shape[-2], out_h).astype(dt)
    rw = interp_matrix(a.shape[-1], out_w).astype(dt)
    out = rh @ _arr(a) @ rw.T

    def bw(g):
        return (rh.T @ g @ rw,)

    return _make(out, (a,), bw, "bilinear_resize")


def minmax_norm(a, axes=(-2, -1)) -> Tensor:
    """Per-map min-max scaling to [0, 1] over ``axes``.

    Backward holds the arg-min and arg-max positions fixed (first index on
    ties) and differentiates through the extreme values there.  A constant
    map (max == min) maps to 0.5 everywhere with zero gradient.
    """
    a = _as_tensor(a)
    av = _arr(a)
    ax = _norm_axis(axes, a.ndim)
    ax = (ax,) if isinstance(ax, int) else tuple(ax)
    keep = [i for i in range(a.ndim) if i not in ax]
    perm = keep + list(ax)
    moved = np.transpose(av, perm)
    lead = moved.shape[:len(keep)]
    flat_v = moved.reshape(lead + (-1,))
    i_lo = flat_v.argmin(axis=-1)[..., None]
    i_hi = flat_v.argmax(axis=-1)[..., None]
    lo = np.take_along_axis(flat_v, i_lo, axis=-1)
    hi = np.take_along_axis(flat_v, i_hi, axis=-1)
    span = hi - lo
    flat = span <= 0
    safe = np.where(flat, 1.0, span)
    y = np.clip(np.where(flat, 0.5, (flat_v - lo) / safe), 0.0, 1.0)
    inv = np.argsort(perm)

    def unflat(z):
        return np.transpose(z.reshape(moved.shape), inv)

    def bw(g):
        gf = np.transpose(g, perm).reshape(flat_v.shape)
        grad = gf / safe
        gy = np.sum(gf * y, axis=-1, keepdims=True)
        gs = np.sum(gf, axis=-1, keepdims=True)
        np.put_along_axis(grad, i_lo, np.take_along_axis(grad, i_lo, axis=-1) + (gy - gs) / safe, axis=-1)
        np.put_along_axis(grad, i_hi, np.take_along_axis(grad, i_hi, axis=-1) - gy / safe, axis=-1)
        return (unflat(np.where(flat, 0.0, grad)),)

    return _make(unflat(y).astype(av.dtype, copy=False), (a,), bw, "minmax_norm")


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "hadamard": hadamard,
    "add": add,
    "sub": sub,
    "div": div,
    "scale": scale,
    "sum": sum_,
    "mean": mean,
    "softmax": softmax,
    "log_sum_exp": log_sum_exp,
    "l2_norm": l2_norm,
    "cosine_sim": cosine_sim,
    "clamp": clamp,
    "bilinear_resize": bilinear_resize,
    "minmax_norm": minmax_norm,
    "transpose": transpose,
    "reshape": reshape,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "take": take,
    "concat": concat,
    "normalize": normalize,
}


def eval_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``eval_op("softmax", x, axis=0)``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Graph and backward
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Executed ops reachable from an output, parents before children."""

    nodes: list[Tensor] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)


def build_graph(output: Tensor) -> Graph:
    graph = Graph()
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            graph.nodes.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.is_leaf:
            if node.requires_grad:
                graph.leaves.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return graph


def backward(output: Tensor, inputs: Sequence[Tensor] | None = None, retain_graph: bool = False) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad``.

    With ``inputs`` given, only those leaves receive gradients and branches
    that cannot reach them are pruned.
    """
    if output.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
    if output.is_leaf:
        raise GraphError("backward on a detached output (no recorded graph)")
    graph = build_graph(output)
    targets = None if inputs is None else {id(t) for t in inputs}

    useful: dict[int, bool] = {}
    for leaf in graph.leaves:
        useful[id(leaf)] = targets is None or id(leaf) in targets
    for node in graph.nodes:
        useful[id(node)] = any(useful.get(id(p), False) for p in node._parents)

    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape, dtype=output.data.dtype)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None or not useful[id(node)]:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad or not useful.get(id(p), False):
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for leaf in graph.leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    if not retain_graph:
        for node in graph.nodes:
            node._parents = ()
            node._backward = None


def _as_scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value)
    if v.size != 1:
        raise GraphError(f"grad_check needs a scalar-valued function, got shape {v.shape}")
    return float(v.reshape(-1)[0])


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    h: float = 1e-3,
    coords: Iterable[int] | None = None,
    dtype=np.float64,
) -> float:
    """Max relative error between AD and central differences.

    Error per coordinate is ``|ad - fd| / max(1, |fd|)``.  ``coords`` limits
    the probe to a subset of flat indices.  The check runs in ``dtype``
    (float64 by default) so that truncation, not rounding, dominates.
    """
    base = np.asarray(point.data if isinstance(point, Tensor) else point)
    with precision(dtype):
        x = Tensor(base.astype(dtype), requires_grad=True)
        y = f(x)
        val = _as_scalar(y)
        if not math.isfinite(val):
            raise ValueError("grad_check: f is not finite at the base point")
        if y.is_leaf:
            ad = np.zeros(base.shape, dtype=dtype)
        else:
            backward(y, inputs=[x])
            ad = x.grad if x.grad is not None else np.zeros(base.shape, dtype=dtype)
        ad = ad.reshape(-1)
        flat = base.astype(dtype).reshape(-1)
        idx = range(flat.size) if coords is None else list(coords)
        worst = 0.0
        with no_grad():
            for i in idx:
                probe = flat.copy()
                probe[i] += h
                fp = _as_scalar(f(Tensor(probe.reshape(base.shape))))
                probe[i] -= 2 * h
                fm = _as_scalar(f(Tensor(probe.reshape(base.shape))))
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise ValueError(f"grad_check: f is not finite near coordinate {i}")
                fd = (fp - fm) / (2 * h)
                worst = max(worst, abs(ad[i] - fd) / max(1.0, abs(fd)))
    return worst
