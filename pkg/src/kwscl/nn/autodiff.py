"""Minimal reverse-mode autodiff over numpy arrays.

Each op records its parents and a vector-Jacobian closure.  ``backward``
walks the recorded graph once in reverse topological order, accumulates
into leaf ``.grad`` and then frees the graph; a second call without a
fresh forward pass is an error.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None):
        if self._consumed:
            raise RuntimeError("backward already ran on this graph; re-run the forward pass")
        if self._vjp is None:
            raise RuntimeError("no recorded forward pass to differentiate")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        grads = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg
        for node in topo:
            if node._vjp is not None:
                node._parents, node._vjp = (), None
        self._consumed = True


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Zero ``params`` grads, then back-propagate ``loss``; unreached params keep zero grads."""
    for p in params:
        p.zero_grad()
    loss.backward()


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return _node(x.data @ w.data + b.data, (x, w, b),
                 lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the batch axis."""
    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)
    return _node(x.data[start:stop], (x,), vjp)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full_like(x.data, g / n),))


def depthwise_conv2d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    y = kernels.depthwise_forward(x.data, k.data, stride)

    def vjp(g):
        dx, dk = kernels.depthwise_backward(x.data, k.data, g, stride,
                                            x.requires_grad, k.requires_grad)
        return dx, dk
    return _node(y, (x, k), vjp)


def pointwise_conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """1x1 convolution; ``w`` is ``(Cin, Cout)`` or ``(1, 1, Cin, Cout)``."""
    w2 = w.data.reshape(w.shape[-2], w.shape[-1])
    flat = x.data.reshape(-1, x.shape[-1])
    y = flat @ w2
    if b is not None:
        y = y + b.data
    out_shape = x.shape[:-1] + (w2.shape[1],)

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        dx = (g2 @ w2.T).reshape(x.shape) if x.requires_grad else None
        dw = (flat.T @ g2).reshape(w.shape) if w.requires_grad else None
        db = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return dx, dw, db
    parents = (x, w) + ((b,) if b is not None else (Tensor(np.zeros(0)),))
    return _node(y.reshape(out_shape), parents, vjp)


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor,
                     bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Depthwise ``k x k`` per-channel convolution, then a 1x1 channel mix.

    ``x`` is NHWC, or HWC for a single example.
    """
    if x.data.ndim == 3:
        out = separable_conv2d(reshape(x, (1,) + x.shape), depthwise, pointwise, bias, stride)
        return reshape(out, out.shape[1:])
    if depthwise.shape[0] % 2 == 0 or depthwise.shape[0] != depthwise.shape[1]:
        raise ValueError(f"depthwise kernel must be square and odd, got {depthwise.shape}")
    if depthwise.shape[2] != x.shape[3] or pointwise.shape[-2] != x.shape[3]:
        raise ValueError(f"channel mismatch: input {x.shape}, depthwise {depthwise.shape}, "
                         f"pointwise {pointwise.shape}")
    return pointwise_conv2d(depthwise_conv2d(x, depthwise, stride), pointwise, bias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last (channel) axis at every position."""
    y, xhat, inv = kernels.layer_norm_forward(x.data, gain.data, bias.data, eps)

    def vjp(g):
        dx, dgain, dbias = kernels.layer_norm_backward(g, xhat, inv, gain.data)
        return (dx if x.requires_grad else None, dgain if gain.requires_grad else None,
                dbias if bias.requires_grad else None)
    return _node(y, (x, gain, bias), vjp)


def shortcut(x: Tensor, stride: int, out_channels: int) -> Tensor:
    """Parameter-free residual path: spatial subsampling plus zero channel padding."""
    cin = x.shape[-1]
    if out_channels < cin:
        raise ValueError("shortcut cannot drop channels")
    sub = x.data[:, ::stride, ::stride, :]
    y = np.zeros(sub.shape[:-1] + (out_channels,), dtype=x.dtype)
    y[..., :cin] = sub

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[:, ::stride, ::stride, :] = g[..., :cin]
        return (dx,)
    return _node(y, (x,), vjp)


def manhattan(left: Tensor, right: Tensor) -> Tensor:
    diff = left.data - right.data
    sgn = np.sign(diff)

    def vjp(g):
        gs = g[..., None] * sgn
        return gs, -gs
    return _node(np.abs(diff).sum(axis=-1), (left, right), vjp)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _node(y, (x,), lambda g: (g * y,))


def siamese_distance(left: Tensor, right: Tensor) -> Tensor:
    """``exp(-sum_i |left_i - right_i|)``; 1 for identical embeddings, towards 0 as they separate."""
    return exp(mul(manhattan(left, right), -1.0))


BCE_EPS = 1e-7
SIMILAR_IS_1 = "similar_is_1"
PAPER_STATED = "paper_stated"


def pair_targets(positive, convention: str = SIMILAR_IS_1) -> np.ndarray:
    """BCE targets for pair polarities (True = positive pair)."""
    pos = np.asarray(positive, dtype=bool)
    if convention == SIMILAR_IS_1:
        return pos.astype(np.float64)
    if convention == PAPER_STATED:
        return (~pos).astype(np.float64)
    raise ValueError(f"unknown label convention {convention!r}")


def contrastive_bce(d: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of similarity scores ``d`` with ``d`` clamped to [eps, 1-eps]."""
    y = np.broadcast_to(np.asarray(targets, dtype=d.dtype), d.shape)
    p = np.clip(d.data, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (d.data > BCE_EPS) & (d.data < 1.0 - BCE_EPS)
    n = max(loss.size, 1)

    def vjp(g):
        return (g * inside * (-(y / p) + (1.0 - y) / (1.0 - p)) / n,)
    return _node(np.asarray(loss.mean()), (d,), vjp)


def siamese_bce(left: Tensor, right: Tensor, targets) -> Tensor:
    """Mean BCE of ``exp(-manhattan)`` computed in log space.

    Agrees with ``contrastive_bce(siamese_distance(l, r), y)`` whenever the
    distance score lies inside the clamp range, but keeps a useful gradient
    when the score underflows: the target-1 term is the Manhattan distance
    itself rather than a clamped constant.
    """
    s = manhattan(left, right)
    y = np.asarray(targets, dtype=s.dtype)
    s_min = -np.log1p(-BCE_EPS)
    sv = np.maximum(s.data, s_min)
    neg_term = -np.log(-np.expm1(-sv))
    loss = y * s.data + (1.0 - y) * neg_term
    n = max(loss.size, 1)

    def vjp(g):
        dneg = np.where(s.data > s_min, -1.0 / np.expm1(sv), 0.0)
        return (g * (y + (1.0 - y) * dneg) / n,)
    return _node(np.asarray(loss.mean()), (s,), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy via a max-shifted log-sum-exp."""
    z = logits.data
    if z.ndim == 1:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    c = z.shape[1]
    if c < 2:
        raise ValueError("need at least two classes")
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"class index out of range for {c} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return ((g * d / n).reshape(logits.shape),)
    return _node(np.asarray(loss), (logits,), vjp)
