"""Dense float64 tensors with reverse-mode gradient accumulation.

Every op builds a node holding its forward value, its parents and a closure
that pushes the incoming gradient back onto the parents. Leading batch
dimensions are supported throughout; the model batches examples (and
attention heads) along them to keep the Python overhead per step small.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError


class Tensor:
    """A value in the computation graph.

    ``grad`` is allocated lazily and accumulates additively across
    backward passes until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # operator sugar used by the model code
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, op=op,
                  parents=parents if req else (), backward=fn if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dNode into ``grad`` of every reachable node.

    Nodes are visited once each in reverse topological order, so gradients
    reaching a node along several paths are summed before it propagates.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    # intermediate grads are local to this pass; leaves keep accumulating
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ---------------------------------------------------------------- primitives

def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``W @ x + b`` applied over the last axis of ``x``.

    Args:
        x: input of shape (..., F_in).
        W: weight matrix of shape (F_out, F_in).
        b: bias of shape (F_out,).

    Returns:
        Tensor of shape (..., F_out).
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1:] != W.shape[1:] or b.shape != W.shape[:1]:
        raise DimensionError(
            f"affine shape mismatch: x{x.shape}, W{W.shape}, b{b.shape}")
    out = x.data @ W.data.T + b.data

    def fn(g):
        xs = x.data.reshape(-1, x.shape[-1])
        gs = g.reshape(-1, g.shape[-1])
        return g @ W.data, gs.T @ xs, gs.sum(axis=0)

    return _node(out, "affine", (x, W, b), fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(out, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,))


def leaky_relu(v: Tensor, slope: float = 0.2) -> Tensor:
    # at exactly 0 the negative-branch slope is used
    if slope < 0:
        raise DomainError(f"leaky_relu slope must be >= 0, got {slope}")
    v = as_tensor(v)
    d = np.where(v.data > 0, 1.0, slope)
    return _node(v.data * d, "leaky_relu", (v,), lambda g: (g * d,))


def elu(v: Tensor) -> Tensor:
    """ELU with alpha=1; derivative at 0 taken from the negative branch."""
    v = as_tensor(v)
    pos = v.data > 0
    ex = np.exp(np.minimum(v.data, 0.0))
    out = np.where(pos, v.data, ex - 1.0)
    d = np.where(pos, 1.0, ex)
    return _node(out, "elu", (v,), lambda g: (g * d,))


def softmax(v: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (broadcastable boolean) excludes entries: they get probability
    zero and receive no gradient. Every slice must keep at least one entry.
    """
    v = as_tensor(v)
    if v.data.size == 0 or v.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    x = v.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, "softmax", (v,), fn)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    m = v.max(axis=axis, keepdims=True)
    return v - m - np.log(np.exp(v - m).sum(axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Fused log-sum-exp cross-entropy.

    ``logits`` of shape (K,) with an integer target gives a scalar;
    shape (B, K) with B targets gives a per-row loss of shape (B,).
    """
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.int64)
    k = logits.shape[-1]
    if t.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {t.shape} do not match logits {logits.shape}")
    if np.any(t < 0) or np.any(t >= k):
        raise IndexError(f"target {t.tolist()} out of range for {k} classes")
    lsm = log_softmax(logits.data)
    picked = np.take_along_axis(lsm, t[..., None], axis=-1)[..., 0]

    def fn(g):
        p = np.exp(lsm)
        np.put_along_axis(p, t[..., None],
                          np.take_along_axis(p, t[..., None], axis=-1) - 1.0, axis=-1)
        return (p * np.asarray(g)[..., None],)

    return _node(-picked, "cross_entropy", (logits,), fn)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise DomainError("concat of an empty list")
    parts = [as_tensor(p) for p in parts]
    if len(parts) == 1:
        return parts[0]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, "concat", tuple(parts), fn)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DomainError("stack of an empty list")
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)

    def fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(out, "stack", tuple(parts), fn)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(out, "getitem", (a,), fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(a.data.reshape(shape), "reshape", (a,),
                 lambda g: (g.reshape(a.shape),))


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    return _node(np.asarray(a.data.sum()), "sum", (a,),
                 lambda g: (np.broadcast_to(g, a.shape),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        return _node(np.asarray(a.data.mean()), "mean", (a,),
                     lambda g: (np.broadcast_to(g / n, a.shape),))
    n = a.shape[axis]
    return _node(a.data.mean(axis=axis), "mean", (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape),))


def _einsum_grad_spec(spec: str) -> tuple[list[str], str]:
    lhs, out = spec.replace(" ", "").split("->")
    return lhs.split(","), out


def einsum(spec: str, *ops: Tensor) -> Tensor:
    """Differentiable ``np.einsum`` (explicit output form, no repeated
    indices inside one operand)."""
    ops = tuple(as_tensor(o) for o in ops)
    ins, out_sub = _einsum_grad_spec(spec)
    if len(ins) != len(ops):
        raise DimensionError(f"einsum '{spec}' expects {len(ins)} operands")
    out = np.einsum(spec, *(o.data for o in ops), optimize=len(ops) > 2)

    def fn(g):
        grads = []
        for i, (sub, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [ops[j].data for j in range(len(ops)) if j != i]
            other_subs = [ins[j] for j in range(len(ops)) if j != i]
            avail = set(out_sub).union(*other_subs) if other_subs else set(out_sub)
            kept = "".join(c for c in sub if c in avail)
            gi = np.einsum(",".join([out_sub, *other_subs]) + "->" + kept, g, *others)
            if kept != sub:
                # index summed only inside this operand: broadcast back
                shape = [o.shape[k] if c in avail else 1 for k, c in enumerate(sub)]
                gi = np.broadcast_to(gi.reshape(shape), o.shape)
            grads.append(gi)
        return tuple(grads)

    return _node(out, "einsum", ops, fn)


# ------------------------------------------------------------ verification

def numeric_grad(fn: Callable[[], float], x: np.ndarray, idx, eps: float) -> float:
    """Central difference of ``fn`` w.r.t. ``x[idx]``, restoring ``x`` afterwards."""
    old = x[idx]
    x[idx] = old + eps
    fp = fn()
    x[idx] = old - eps
    fm = fn()
    x[idx] = old
    return (fp - fm) / (2.0 * eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               indices: Iterable | None = None) -> float:
    """Max relative error between backward and central differences.

    ``fn`` maps a tensor to a scalar tensor. All coordinates are checked
    unless ``indices`` restricts them.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    fn(xt).backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    probe = Tensor(xt.data.copy())

    def f():
        return float(fn(probe).data)

    worst = 0.0
    for idx in (indices if indices is not None else np.ndindex(*xt.shape)):
        num = numeric_grad(f, probe.data, idx, eps)
        worst = max(worst, relative_error(float(analytic[idx]), num))
    return worst
