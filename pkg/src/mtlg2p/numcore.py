"""Dense tensors with a reverse-mode tape, losses, gradient checking and optimizers.

Every differentiable op computes its forward value with numpy and appends a
record ``(op name, output, inputs, context)`` to the current thread's tape.
``backward`` replays the tape in reverse, looking the gradient rule for each
record up in ``BACKWARD``. Keeping the rules in a table makes it possible to
swap one out from a test (the gradient checker must catch a broken rule).
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7

_DTYPES = {"float32": np.float32, "float64": np.float64}


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    """Raised when backward / optimizer contracts are violated."""


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.tape = None


_state = _State()


def get_default_dtype():
    return _state.dtype


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(_DTYPES.get(dtype, dtype)).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created float tensors."""
    old = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


class Tape:
    """Ordered record of executed ops. Usable as a context manager to scope recording."""

    def __init__(self):
        self.records: list[tuple] = []
        self._outer = None

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        self._outer = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._outer
        self._outer = None

    def clear(self):
        self.records.clear()


def current_tape() -> Tape:
    if _state.tape is None:
        _state.tape = Tape()
    return _state.tape


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_state.dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _state.dtype))


def _wrap(data: np.ndarray, requires_grad: bool) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    out.name = None
    out._tape = None
    return out


def _record(op: str, data: np.ndarray, inputs: tuple, ctx=None) -> Tensor:
    needs = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = _wrap(data, needs)
    if needs:
        tape = current_tape()
        tape.records.append((op, out, inputs, ctx))
        out._tape = tape
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops


def affine(x: Tensor, W: Tensor, bias: Tensor) -> Tensor:
    """``x @ W + bias`` for ``x`` of shape (b, m), ``W`` (m, n), ``bias`` (n,)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or bias.shape != (W.shape[1],):
        raise ShapeError(f"affine: cannot combine x{x.shape} with W{W.shape} and bias{bias.shape}")
    return _record("affine", x.data @ W.data + bias.data, (x, W, bias))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    return _record("matmul", a.data @ b.data, (a, b))


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    return _record("add", a.data + b.data, (a, b))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    return _record("mul", a.data * b.data, (a, b))


def scale(x: Tensor, c: float) -> Tensor:
    return _record("scale", x.data * x.dtype.type(c), (x,), c)


def sum_all(x: Tensor) -> Tensor:
    return _record("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    d = x.data
    half = d.dtype.type(0.5)
    return _record("sigmoid", half * np.tanh(half * d) + half, (x,))


def tanh(x: Tensor) -> Tensor:
    return _record("tanh", np.tanh(x.data), (x,))


def relu(x: Tensor) -> Tensor:
    return _record("relu", np.maximum(x.data, 0), (x,))


def prelu(x: Tensor, alpha: float) -> Tensor:
    d = x.data
    return _record("prelu", np.where(d >= 0, d, d * d.dtype.type(alpha)), (x,), alpha)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _record("log_softmax", y, (x,), axis)


def activation(x: Tensor, kind: str, alpha: float = 1.0, axis: int = -1) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "prelu":
        return prelu(x, alpha)
    if kind == "log_softmax":
        return log_softmax(x, axis)
    raise ValueError(f"unknown activation {kind!r}")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    return _record("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs), axis)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _record("stack", np.stack([x.data for x in xs], axis=axis), tuple(xs), axis)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[..., start:stop]``."""
    return _record("columns", x.data[..., start:stop], (x,), (start, stop))


def reshape(x: Tensor, shape) -> Tensor:
    return _record("reshape", x.data.reshape(shape), (x,))


def embedding(weight: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise IndexError(f"embedding index out of range for table of {weight.shape[0]} rows")
    return _record("embedding", weight.data[idx], (weight,), idx)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select; ``mask`` is a constant boolean array broadcastable to the operands."""
    m = np.asarray(mask, dtype=bool)
    return _record("where", np.where(m, a.data, b.data), (a, b), m)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. With ``rng`` None (eval mode) or p == 0 this is the identity."""
    if rng is None or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _record("dropout", x.data * keep, (x,), keep)


def _acc(dtype):
    return np.promote_types(dtype, np.float64)


def nll_loss(log_probs: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood over the unmasked rows of a (T, V) log-prob matrix."""
    t = np.asarray(targets, dtype=np.int64)
    n_rows, vocab = log_probs.shape
    m = np.ones(n_rows, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if t.shape != (n_rows,) or m.shape != (n_rows,):
        raise ShapeError(f"nll_loss: targets {t.shape} / mask {m.shape} do not match {log_probs.shape}")
    rows = np.flatnonzero(m)
    if rows.size == 0:
        raise GradientError("nll_loss: every position is masked")
    if (t[rows] < 0).any() or (t[rows] >= vocab).any():
        raise IndexError(f"nll_loss: target index outside [0, {vocab})")
    picked = log_probs.data[rows, t[rows]]
    value = -picked.sum(dtype=_acc(picked.dtype)) / rows.size
    return _record("nll", np.asarray(value, dtype=log_probs.dtype), (log_probs,), (rows, t[rows]))


def bce_loss(p: Tensor, y) -> Tensor:
    """Binary cross-entropy, averaged over items. ``p`` is clamped to [eps, 1 - eps]."""
    labels = np.asarray(y, dtype=p.dtype).reshape(p.shape)
    pc = np.clip(p.data, BCE_EPS, 1 - BCE_EPS)
    items = -(labels * np.log(pc) + (1 - labels) * np.log1p(-pc))
    value = items.sum(dtype=_acc(items.dtype)) / max(items.size, 1)
    return _record("bce", np.asarray(value, dtype=p.dtype), (p,), (labels, pc))


# ---------------------------------------------------------------------------
# gradient rules: fn(ctx, inputs, out, gout) -> tuple of input grads (None = no grad)


def _bw_affine(ctx, inputs, out, g):
    x, W, _ = inputs
    return g @ W.data.T, x.data.T @ g, g.sum(axis=0)


def _bw_matmul(ctx, inputs, out, g):
    a, b = inputs
    return g @ b.data.T, a.data.T @ g


def _bw_add(ctx, inputs, out, g):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_mul(ctx, inputs, out, g):
    a, b = inputs
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def _bw_concat(ctx, inputs, out, g):
    bounds = np.cumsum([x.shape[ctx] for x in inputs])[:-1]
    return tuple(np.split(g, bounds, axis=ctx))


def _bw_stack(ctx, inputs, out, g):
    return tuple(np.take(g, i, axis=ctx) for i in range(len(inputs)))


def _bw_columns(ctx, inputs, out, g):
    (x,) = inputs
    gx = np.zeros_like(x.data)
    gx[..., ctx[0]:ctx[1]] = g
    return (gx,)


def _bw_embedding(ctx, inputs, out, g):
    (w,) = inputs
    gw = np.zeros_like(w.data)
    np.add.at(gw, ctx, g)
    return (gw,)


def _bw_nll(ctx, inputs, out, g):
    (lp,) = inputs
    rows, t = ctx
    gl = np.zeros_like(lp.data)
    gl[rows, t] = -g / rows.size
    return (gl,)


def _bw_bce(ctx, inputs, out, g):
    (p,) = inputs
    labels, pc = ctx
    d = (-(labels / pc) + (1 - labels) / (1 - pc)) / max(pc.size, 1)
    inside = (p.data > BCE_EPS) & (p.data < 1 - BCE_EPS)
    return (g * d * inside,)


BACKWARD: dict[str, Callable] = {
    "affine": _bw_affine,
    "matmul": _bw_matmul,
    "add": _bw_add,
    "mul": _bw_mul,
    "scale": lambda c, i, o, g: (g * o.dtype.type(c),),
    "sum": lambda c, i, o, g: (np.broadcast_to(g, i[0].shape).copy(),),
    "sigmoid": lambda c, i, o, g: (g * o.data * (1 - o.data),),
    "tanh": lambda c, i, o, g: (g * (1 - o.data * o.data),),
    "relu": lambda c, i, o, g: (g * (i[0].data > 0),),
    "prelu": lambda c, i, o, g: (g * np.where(i[0].data >= 0, 1, o.dtype.type(c)),),
    "log_softmax": lambda c, i, o, g: (g - np.exp(o.data) * g.sum(axis=c, keepdims=True),),
    "concat": _bw_concat,
    "stack": _bw_stack,
    "columns": _bw_columns,
    "reshape": lambda c, i, o, g: (g.reshape(i[0].shape),),
    "embedding": _bw_embedding,
    "where": lambda c, i, o, g: (_unbroadcast(g * c, i[0].shape), _unbroadcast(g * ~c, i[1].shape)),
    "dropout": lambda c, i, o, g: (g * c,),
    "nll": _bw_nll,
    "bce": _bw_bce,
}


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from a scalar ``loss``.

    Leaf gradients accumulate across calls until zeroed. The tape the loss was
    recorded on is cleared afterwards.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op, out, inputs, ctx in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for x, gx in zip(inputs, BACKWARD[op](ctx, inputs, out, g)):
            if gx is None or not x.requires_grad:
                continue
            if x._tape is None:
                # leaf
                x.grad = gx.astype(x.dtype, copy=True) if x.grad is None else x.grad + gx
            else:
                key = id(x)
                grads[key] = gx if key not in grads else grads[key] + gx
    tape.clear()


# ---------------------------------------------------------------------------
# optimization


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_global_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale all grads so their joint L2 norm is at most ``max_norm``. Returns the factor applied."""
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * p.dtype.type(factor)
    return factor


def _require_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            raise GradientError(f"no gradient for parameter {p.name or p.shape}")


def sgd_step(params: Sequence[Tensor], lr: float) -> None:
    """``w -= lr * grad`` for every parameter, then zero the grads."""
    _require_grads(params)
    for p in params:
        p.data -= p.dtype.type(lr) * p.grad
        p.grad = None


class SGD:
    name = "sgd"

    def step(self, params: Sequence[Tensor], lr: float) -> None:
        sgd_step(params, lr)


class Adam:
    """Adam with bias correction; moment buffers are kept per parameter position."""

    name = "adam"

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def step(self, params: Sequence[Tensor], lr: float) -> None:
        _require_grads(params)
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def make_optimizer(name: str):
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# verification


def _objectives(out) -> list[Tensor]:
    return list(out) if isinstance(out, (tuple, list)) else [out]


def finite_difference_gradcheck(f: Callable, params: Sequence[Tensor], h: float = 1e-5, oracle_dtype=np.longdouble) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must return a scalar tensor (or a tuple of scalars, which are
    all checked against the same perturbations) and be deterministic. Tape
    gradients are taken at the params' own dtype (use float64). The central
    differences are evaluated on copies cast to ``oracle_dtype``; the extended
    default keeps cancellation noise (~eps*|f|/h) far below the 1e-8 floor of the
    error measure. Pass ``oracle_dtype=None`` to difference at the params' dtype.
    """
    params = list(params)
    analytic = []
    for k in range(len(_objectives(f(params)))):
        zero_grads(params)
        loss = _objectives(f(params))[k]
        if loss.data.size != 1 or not np.isfinite(loss.data).all():
            raise FloatingPointError("gradcheck: objective is not a finite scalar")
        backward(loss)
        analytic.append([np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params])
    zero_grads(params)

    if oracle_dtype is None:
        probe = params
    else:
        probe = [Tensor(p.data.astype(oracle_dtype), name=p.name) for p in params]
    step = probe[0].dtype.type(h) if probe else h
    worst = 0.0
    with no_grad():
        for i, p in enumerate(probe):
            flat = p.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + step
                up = [t.data.reshape(()) for t in _objectives(f(probe))]
                flat[k] = orig - step
                down = [t.data.reshape(()) for t in _objectives(f(probe))]
                flat[k] = orig
                for j, (u, d) in enumerate(zip(up, down)):
                    if not (np.isfinite(u) and np.isfinite(d)):
                        raise FloatingPointError(f"gradcheck: non-finite loss perturbing {p.name}[{k}]")
                    numeric = float((u - d) / (2 * step))
                    a = float(analytic[j][i].reshape(-1)[k])
                    worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst
