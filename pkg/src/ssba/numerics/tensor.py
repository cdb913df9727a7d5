"""Tape-based reverse-mode differentiation over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output gradient back to them. Complex quantities are
carried as separate real/imaginary tensors; the complex-valued ops below
take and return such pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

MODULUS_FLOOR = 1e-12
BCE_CLAMP = 1e-7


class Tensor:
    """A node of the computation graph.

    Args:
        data: Array-like payload, stored as a C-contiguous float64 array.
        requires_grad: Whether gradients should be accumulated into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (),
                 _op: str = "leaf", _backward: Callable | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value produced by '{_op}'")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = _op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this node to every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed requires a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are dead once propagated
                node.grad = None

    # operator sugar --------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> Tensor:
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> Tensor:
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=live, _op=op, _backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", backward)


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _node(out, (x,), "sum", backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[:, start:stop]``."""
    out = x.data[:, start:stop]

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return _node(out, (x,), "columns", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def backward(g):
        x._accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), "relu", backward)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    return _node(s, (x,), "sigmoid", backward)


def to_db(x: Tensor, offset: float = 0.0) -> Tensor:
    """``10*log10(x + offset)``; ``x + offset`` must be positive."""
    shifted = x.data + offset
    if (shifted <= 0).any():
        raise NumericError("to_db of a non-positive value")

    def backward(g):
        x._accumulate(g * (10.0 / math.log(10.0)) / shifted)

    return _node(10.0 * np.log10(shifted), (x,), "to_db", backward)


# linear algebra ----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


# complex-valued ops on (re, im) pairs -------------------------------------------

def cplx_matvec(w_re, w_im, h_re, h_im) -> tuple[Tensor, Tensor]:
    """Row-wise ``W^H h`` for a batch of vectors.

    ``W`` is N x K and ``h`` is B x N; returns the B x K real and imaginary
    parts of ``conj(W)^T h`` for every row.
    """
    w_re, w_im, h_re, h_im = map(as_tensor, (w_re, w_im, h_re, h_im))
    if w_re.shape != w_im.shape or h_re.shape != h_im.shape:
        raise ShapeError("real and imaginary parts differ in shape")
    if h_re.data.ndim != 2 or w_re.data.ndim != 2 or h_re.shape[1] != w_re.shape[0]:
        raise ShapeError(f"cplx_matvec shape mismatch: W {w_re.shape}, h {h_re.shape}")
    # (H conj(W)): re = Hr Wr + Hi Wi ; im = Hi Wr - Hr Wi
    y_re = matmul(h_re, w_re) + matmul(h_im, w_im)
    y_im = matmul(h_im, w_re) - matmul(h_re, w_im)
    return y_re, y_im


def abs_squared(re, im) -> Tensor:
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError("abs_squared operands differ in shape")

    def backward(g):
        if re.requires_grad:
            re._accumulate(2.0 * g * re.data)
        if im.requires_grad:
            im._accumulate(2.0 * g * im.data)

    return _node(re.data ** 2 + im.data ** 2, (re, im), "abs_squared", backward)


def phase_parameterize(phi: Tensor, n: int) -> tuple[Tensor, Tensor]:
    """Map phases to unit-modulus weights ``exp(j*phi)/sqrt(n)``."""
    scale = 1.0 / math.sqrt(n)
    c, s = np.cos(phi.data), np.sin(phi.data)

    def back_re(g):
        phi._accumulate(-g * s * scale)

    def back_im(g):
        phi._accumulate(g * c * scale)

    return (_node(c * scale, (phi,), "phase_re", back_re),
            _node(s * scale, (phi,), "phase_im", back_im))


def cplx_unit_normalize(re: Tensor, im: Tensor, n: int) -> tuple[Tensor, Tensor]:
    """Project every complex entry onto modulus ``1/sqrt(n)``.

    Raises:
        NumericError: if some entry has modulus below ``MODULUS_FLOOR``.
    """
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError("real and imaginary parts differ in shape")
    r = np.hypot(re.data, im.data)
    if (r < MODULUS_FLOOR).any():
        raise NumericError("modulus underflow in cplx_unit_normalize")
    scale = 1.0 / math.sqrt(n)
    out_re = re.data / r * scale
    out_im = im.data / r * scale
    r3 = r ** 3

    # gradient is linear in the two upstream halves, so each half back-propagates alone
    def push(gr, gi):
        cross = gr * im.data - gi * re.data
        if re.requires_grad:
            re._accumulate(scale * im.data * cross / r3)
        if im.requires_grad:
            im._accumulate(-scale * re.data * cross / r3)

    def back_re(g):
        push(g, 0.0)

    def back_im(g):
        push(0.0, g)

    return (_node(out_re, (re, im), "unorm_re", back_re),
            _node(out_im, (re, im), "unorm_im", back_im))


# normalisation -----------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics of one batch-normalisation layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, dim: int) -> BatchNormState:
        return cls(np.zeros(dim), np.ones(dim))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              training: bool) -> Tensor:
    """Per-feature batch normalisation with an affine output.

    In training mode the batch statistics are used (biased variance) and the
    running statistics are updated with the unbiased variance. In inference
    mode the running statistics are used.
    """
    if x.data.ndim != 2:
        raise ShapeError("batchnorm expects a B x d input")
    b = x.shape[0]
    eps = state.eps
    if training:
        if b < 2:
            raise ShapeError("batchnorm in training mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * b / (b - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                dx = inv_std / b * (b * dxhat - dxhat.sum(axis=0)
                                    - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dx = dxhat * inv_std
            x._accumulate(dx)

    return _node(out, (x, gamma, beta), "batchnorm", backward)


# losses ------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    b, m = logits.shape
    if labels.shape != (b,):
        raise ShapeError("one label per logits row expected")
    if (labels < 0).any() or (labels >= m).any():
        raise ValueError(f"label out of range [0, {m})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(logsumexp - z[rows, labels]))

    def backward(g):
        p = np.exp(z - logsumexp[:, None])
        p[rows, labels] -= 1.0
        logits._accumulate(g * p / b)

    return _node(np.array(loss), (logits,), "softmax_xent", backward)


def binary_cross_entropy(probs: Tensor, onehot, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean over all entries of the elementwise binary cross-entropy."""
    y = np.asarray(onehot, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError("probs and targets differ in shape")
    p = np.clip(probs.data, clamp, 1.0 - clamp)
    inside = (probs.data >= clamp) & (probs.data <= 1.0 - clamp)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    count = y.size

    def backward(g):
        d = (-y / p + (1.0 - y) / (1.0 - p)) * inside
        probs._accumulate(g * d / count)

    return _node(np.array(loss), (probs,), "bce", backward)
