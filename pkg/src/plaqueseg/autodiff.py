"""Dense tensors with a define-by-run reverse-mode tape.

Every differentiable op builds its output with :func:`record`, attaching the
parents and a closure that maps the output gradient to one gradient per
parent. :func:`backprop` walks the recorded graph from a scalar loss in
reverse topological order and adds the results into ``Parameter.grad``.

Broadcasting is deliberately narrow: binary ops accept tensors of identical
shape or a Python scalar. Per-channel and per-gate broadcasting lives inside
the dedicated layer ops.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()
_DEFAULT_DTYPE = [np.float32]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE[0] = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE[0]


@contextmanager
def default_dtype(dtype):
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class ShapeError(ValueError):
    """An op received operands whose shapes violate its contract."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GradcheckError(ArithmeticError):
    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(f"{parameter}: {message}")


class Tensor:
    """N-dimensional array node on the tape.

    ``op`` is the tag of the op that produced the tensor (``None`` for
    leaves) and ``parents`` the input nodes in forward order.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            # numpy float arrays keep their precision; Python numbers and lists use the default
            is_array = isinstance(data, (np.ndarray, np.generic))
            arr = np.asarray(data)
            dtype = arr.dtype if is_array and arr.dtype in (np.float32, np.float64) else get_default_dtype()
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.ndim > 4:
            raise ShapeError("tensor", arr.shape, detail="rank must be at most 4")
        if arr.ndim and min(arr.shape) < 1:
            raise ShapeError("tensor", arr.shape, detail="all dimensions must be >= 1")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = None
        self.parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return self.shape[0]

    def backward(self):
        backprop(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Named leaf tensor updated by the optimizer.

    Non-trainable parameters (e.g. batch-norm running statistics) are saved
    in checkpoints but never receive gradients.
    """

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype, name=name)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _not_scalar(shape):
    raise ValueError(f"expected a single-element tensor, got shape {shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def record(op: str, parents: Sequence[Tensor], data: np.ndarray,
           backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a forward result as a tape node.

    ``backward`` receives the gradient of the output and returns one gradient
    (or ``None``) per parent, in the order given.
    """
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = tuple(parents)
        out._backward = backward
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backprop(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf that requires a gradient."""
    if loss.data.size != 1:
        raise ValueError(f"backprop needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if isinstance(node, Parameter):
                node.grad += g
            elif node.grad is None:
                node.grad = np.array(g, dtype=node.dtype)
            else:
                node.grad = node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def gradcheck(fn: Callable[[], Tensor], parameters: Iterable[Parameter], eps: float = 1e-5,
              entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    The error of one entry is ``|a - n| / max(1, |a|, |n|)``. ``fn`` must
    rebuild the graph on every call and all parameters must be float64.
    With ``entries`` set, at most that many entries per parameter are
    perturbed, chosen without replacement from a generator seeded by ``seed``.
    """
    parameters = list(parameters)
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in parameters:
        if p.dtype != np.float64:
            raise GradcheckError(p.name, "gradcheck requires float64 parameters")
        p.zero_grad()
    loss = fn()
    if not np.isfinite(loss.data).all():
        raise GradcheckError(", ".join(p.name for p in parameters), "non-finite loss at the unperturbed point")
    backprop(loss)
    worst = 0.0
    with no_grad():
        for p in parameters:
            analytic = p.grad.reshape(-1).copy()
            flat = p.data.reshape(-1)
            idx = range(flat.size)
            if entries is not None and entries < flat.size:
                idx = sorted(np.random.default_rng(seed).choice(flat.size, entries, replace=False).tolist())
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn().data)
                flat[i] = orig - eps
                down = float(fn().data)
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise GradcheckError(p.name, f"non-finite value at entry {i}")
                numeric = (up - down) / (2 * eps)
                a = float(analytic[i])
                if not math.isfinite(a):
                    raise GradcheckError(p.name, f"non-finite analytic gradient at entry {i}")
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- elementwise

def _binary_operands(op, a, b):
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and b_t:
        if a.shape != b.shape:
            raise ShapeError(op, a.shape, b.shape)
        return a, b, a.data, b.data
    if a_t:
        return a, None, a.data, a.dtype.type(b)
    return None, b, b.dtype.type(a), b.data


def _pack(a, b):
    return tuple(t for t in (a, b) if t is not None)


def _split(a, b, ga, gb):
    out = []
    if a is not None:
        out.append(ga)
    if b is not None:
        out.append(gb)
    return out


def add(a, b) -> Tensor:
    ta, tb, x, y = _binary_operands("add", a, b)
    return record("add", _pack(ta, tb), x + y, lambda g: _split(ta, tb, g, g))


def sub(a, b) -> Tensor:
    ta, tb, x, y = _binary_operands("sub", a, b)
    return record("sub", _pack(ta, tb), x - y, lambda g: _split(ta, tb, g, -g))


def mul(a, b) -> Tensor:
    ta, tb, x, y = _binary_operands("mul", a, b)
    return record("mul", _pack(ta, tb), x * y, lambda g: _split(ta, tb, g * y, g * x))


def div(a, b) -> Tensor:
    ta, tb, x, y = _binary_operands("div", a, b)
    out = x / y
    return record("div", _pack(ta, tb), out, lambda g: _split(ta, tb, g / y, -g * out / y))


def power(a: Tensor, exponent: float) -> Tensor:
    x = a.data
    return record("pow", (a,), x ** exponent, lambda g: (g * exponent * x ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return record("log", (a,), np.log(x), lambda g: (g / x,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return record("clip", (a,), np.clip(x, lo, hi), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions / shape

def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape),)

    return record("sum", (a,), np.asarray(a.data.sum(axis=axes), dtype=a.dtype), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    # dividing (rather than scaling by 1/count) keeps the mean of equal values exact
    return tsum(a, axes) / float(count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return record("reshape", (a,), data, lambda g: (g.reshape(src),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing; advanced indexing is not supported."""
    if not isinstance(index, tuple):
        index = (index,)
    if any(not isinstance(i, (int, slice, type(Ellipsis))) for i in index):
        raise TypeError("only basic slicing is supported")
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return record("getitem", (a,), np.ascontiguousarray(a.data[index]), backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ValueError("concat needs at least one tensor")
    ref = xs[0].shape
    axis = axis % len(ref)
    for x in xs[1:]:
        if x.ndim != len(ref) or any(x.shape[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise ShapeError("concat", *(t.shape for t in xs), detail=f"axis {axis}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        out = []
        for k in range(len(xs)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(sl)])
        return out

    return record("concat", xs, np.concatenate([x.data for x in xs], axis=axis), backward)


def stack_batch(xs: Sequence[Tensor]) -> Tensor:
    return concat(xs, axis=0)
