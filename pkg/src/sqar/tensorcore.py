"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for a small feedforward classifier with stochastic
quantization inside the graph: broadcast-aware elementwise ops, matmul,
reductions with subgradient argmin/argmax, a fused softmax cross-entropy,
masked softmax (for the Gumbel relaxation), and the quantizer PMF as a
primitive with an analytic backward.  Stochastic nodes differentiate with
their noise held fixed; backing through a hard categorical draw raises.

Graphs are implicit (each Tensor keeps its parents); a backward pass walks
the topological order.  Single-threaded and deterministic.
"""

import numpy as np

from . import _kernels


class NonDifferentiableError(RuntimeError):
    """Backward reached a hard (non-relaxed) sampling node."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _prev)
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph walk ------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward needs a scalar output")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._prev:
                visit(p)
            order.append(node)

        visit(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _prev=(a, b))

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    out._backward = back
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _prev=(a, b))

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = back
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _prev=(a, b))

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

    out._backward = back
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), _prev=(a,))

    def back(g):
        if a.requires_grad:
            a.grad += g * (a.data > 0.0)   # gradient at 0 defined as 0

    out._backward = back
    return out


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), _prev=(a,))

    def back(g):
        if a.requires_grad:
            a.grad += g * out.data

    out._backward = back
    return out


def xlogx(a):
    """x log x with 0 log 0 = 0; subgradient 0 at x = 0."""
    a = as_tensor(a)
    pos = a.data > 0.0
    val = np.where(pos, a.data * np.log(np.where(pos, a.data, 1.0)), 0.0)
    out = Tensor(val, _prev=(a,))

    def back(g):
        if a.requires_grad:
            a.grad += g * np.where(pos, np.log(np.where(pos, a.data, 1.0)) + 1.0, 0.0)

    out._backward = back
    return out


# -- shape / reduction ---------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), _prev=(a,))

    def back(g):
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    out._backward = back
    return out


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _prev=(a,))

    def back(g):
        if a.requires_grad:
            if axis is None:
                a.grad += np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a.grad += np.broadcast_to(gg, a.data.shape)

    out._backward = back
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def _extreme(a, axis, mode):
    a = as_tensor(a)
    fn = np.max if mode == "max" else np.min
    arg = np.argmax if mode == "max" else np.argmin
    val = fn(a.data, axis=axis)
    idx = arg(a.data, axis=axis)     # first extremum: deterministic subgradient
    out = Tensor(val, _prev=(a,))

    def back(g):
        if a.requires_grad:
            onehot = np.zeros_like(a.data)
            np.put_along_axis(onehot, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis)
            a.grad += onehot

    out._backward = back
    return out


def tmax(a, axis):
    return _extreme(a, axis, "max")


def tmin(a, axis):
    return _extreme(a, axis, "min")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis),
                 _prev=tuple(tensors))

    def back(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad += np.squeeze(piece, axis=axis)

    out._backward = back
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, _prev=(a, b))

    def back(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    out._backward = back
    return out


def affine(x, W, b):
    """x W + b for a (batch, in) input."""
    if x.data.shape[-1] != W.data.shape[0]:
        raise ValueError(
            f"shape mismatch: {x.data.shape} @ {W.data.shape}")
    return add(matmul(x, W), b)


# -- fused losses / softmax ---------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= logits.data.shape[-1]:
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    batch = labels.shape[0] if labels.ndim else 1
    nll = -logp[np.arange(batch), labels] if labels.ndim else -logp[labels]
    out = Tensor(nll.mean(), _prev=(logits,))

    def back(g):
        if logits.requires_grad:
            soft = np.exp(logp)
            onehot = np.zeros_like(soft)
            if labels.ndim:
                onehot[np.arange(batch), labels] = 1.0
            else:
                onehot[labels] = 1.0
            logits.grad += g * (soft - onehot) / batch

    out._backward = back
    return out


def masked_softmax(logits, mask, axis=-1):
    """Softmax restricted to mask == True entries (others get weight 0)."""
    logits = as_tensor(logits)
    m = np.asarray(mask, dtype=bool)
    z = np.where(m, logits.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(m, np.exp(z), 0.0)
    w = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(w, _prev=(logits,))

    def back(g):
        if logits.requires_grad:
            dot = (g * w).sum(axis=axis, keepdims=True)
            logits.grad += w * (g - dot)

    out._backward = back
    return out


def masked_log(a, mask):
    """log on mask == True entries, 0 elsewhere (gradient likewise masked)."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=bool)
    safe = np.where(m, a.data, 1.0)
    out = Tensor(np.where(m, np.log(safe), 0.0), _prev=(a,))

    def back(g):
        if a.requires_grad:
            a.grad += np.where(m, g / safe, 0.0)

    out._backward = back
    return out


# -- quantizer primitives ------------------------------------------------

def sq_pmf_op(v, lo, hi, n_bins, alpha):
    """Quantizer PMFs as a graph node: (...,) values -> (..., n_bins).

    lo / hi must be broadcastable to v's shape.  Backward uses the analytic
    one-sided derivatives of the piecewise-smooth pair aggregation.
    """
    v, lo, hi = as_tensor(v), as_tensor(lo), as_tensor(hi)
    vshape = v.data.shape
    lob = np.broadcast_to(lo.data, vshape)
    hib = np.broadcast_to(hi.data, vshape)
    vf = v.data.ravel()
    probs = _kernels.sq_pmf_flat(vf, lob.ravel().copy(), hib.ravel().copy(),
                                 n_bins, alpha)
    out = Tensor(probs.reshape(vshape + (n_bins,)), _prev=(v, lo, hi))

    def back(g):
        dv, dlo, dhi = _kernels.sq_pmf_flat_vjp(
            vf, lob.ravel().copy(), hib.ravel().copy(), n_bins, alpha,
            np.ascontiguousarray(g.reshape(-1, n_bins)))
        if v.requires_grad:
            v.grad += dv.reshape(vshape)
        if lo.requires_grad:
            lo.grad += _unbroadcast(dlo.reshape(vshape), lo.data.shape)
        if hi.requires_grad:
            hi.grad += _unbroadcast(dhi.reshape(vshape), hi.data.shape)

    out._backward = back
    return out


def bin_values(lo, hi, n_bins):
    """Grid bins as a graph node: broadcasts (...,) lo/hi to (..., n_bins)."""
    lo, hi = as_tensor(lo), as_tensor(hi)
    frac = np.arange(n_bins) / (n_bins - 1)
    shape = np.broadcast_shapes(lo.data.shape, hi.data.shape)
    lo_e = reshape(lo, shape + (1,))
    hi_e = reshape(hi, shape + (1,))
    return add(mul(lo_e, 1.0 - frac), mul(hi_e, frac))


def hard_sample(probs, rng):
    """Exact categorical draw over the last axis; not differentiable."""
    probs = as_tensor(probs)
    flat = probs.data.reshape(-1, probs.data.shape[-1])
    idx = _kernels.categorical_rows(np.ascontiguousarray(flat),
                                    rng.random(flat.shape[0]))
    out = Tensor(idx.reshape(probs.data.shape[:-1]).astype(np.float64),
                 _prev=(probs,))

    def back(g):
        if probs.requires_grad:
            raise NonDifferentiableError(
                "cannot backpropagate through a hard categorical draw; "
                "use the relaxed sampler")

    out._backward = back
    return out


# -- finite differences --------------------------------------------------

def grad_check(f, x, h=1e-4):
    """Max relative error between reverse-mode and central differences.

    f maps a Tensor to a scalar Tensor; x is modified in place during
    probing but restored afterwards.
    """
    x.requires_grad = True
    out = f(x)
    out.backward()
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = float(f(x).data)
        flat[i] = keep - h
        fm = float(f(x).data)
        flat[i] = keep
        nflat[i] = (fp - fm) / (2 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    err = np.abs(analytic - numeric) / denom
    # treat near-zero pairs as agreeing
    err[np.maximum(np.abs(analytic), np.abs(numeric)) < 1e-9] = 0.0
    return float(err.max())
