"""Reverse-mode automatic differentiation over dense numpy tensors.

Supplies exactly the operator set the masked actor-critic network needs:
conv2d, dense, the elementwise family, softmax / log-softmax, channel
concat / slice, reshape, scalar reductions.  Each op records a backward
closure on its output; ``backward()`` replays the recorded graph in
reverse topological order and accumulates into ``.grad`` buffers.

Precision is carried by the tensors themselves: build weights in float64
for gradient checking, float32 for training.  Ops never change dtype.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "GraphError",
    "add", "sub", "mul", "neg", "sigmoid", "tanh", "relu", "one_minus",
    "broadcast_mul_channelwise", "conv2d", "dense",
    "softmax", "log_softmax", "concat_channels", "slice_channels",
    "reshape", "sum_all", "pick", "backward", "zero_grads", "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Backward requested on a non-scalar root or an already-consumed graph."""


class Tensor:
    """Dense n-d array with an optional gradient buffer.

    Tensors are confined to one worker thread at a time; they may be
    handed off between threads but never shared mutably.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op",
                 "_consumed", "_inv_src")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False
        self._inv_src = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Copy of the value, cut off from the recorded graph."""
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)


def _make(data, parents, op):
    out = Tensor(data)
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out._parents = parents if isinstance(parents, tuple) else tuple(parents)
            out._op = op
            break
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g)  # own a copy; g may alias another node's grad
    else:
        t.grad += g


def _accum_owned(t, g):
    # caller guarantees g is freshly allocated and unaliased
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise family

def add(a, b):
    if not isinstance(b, Tensor):
        out = _make(a.data + b, (a,), "add_const")
        if out.requires_grad:
            def _bw():
                _accum(a, out.grad)
            out._backward = _bw
        return out
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum(b, out.grad)
        out._backward = _bw
    return out


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum_owned(b, -out.grad)
        out._backward = _bw
    return out


def neg(a):
    out = _make(-a.data, (a,), "neg")
    if out.requires_grad:
        def _bw():
            _accum_owned(a, -out.grad)
        out._backward = _bw
    return out


def mul(a, b):
    if not isinstance(b, Tensor):
        out = _make(a.data * b, (a,), "mul_const")
        if out.requires_grad:
            def _bw():
                _accum_owned(a, out.grad * b)
            out._backward = _bw
        return out
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum_owned(a, out.grad * b.data)
            if b.requires_grad:
                _accum_owned(b, out.grad * a.data)
        out._backward = _bw
    return out


def sigmoid(a):
    # tanh form: stable against overflow and a single ufunc call
    y = np.tanh(a.data * 0.5)
    y += 1.0
    y *= 0.5
    out = _make(y, (a,), "sigmoid")
    if out.requires_grad:
        def _bw():
            _accum_owned(a, out.grad * (y * (1.0 - y)))
        out._backward = _bw
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = _make(y, (a,), "tanh")
    if out.requires_grad:
        def _bw():
            _accum_owned(a, out.grad * (1.0 - y * y))
        out._backward = _bw
    return out


def relu(a):
    y = np.maximum(a.data, 0.0)
    out = _make(y, (a,), "relu")
    if out.requires_grad:
        def _bw():
            _accum_owned(a, out.grad * (a.data > 0))
        out._backward = _bw
    return out


def broadcast_mul_channelwise(f, m):
    """Multiply a [C,H,W] map by a [1,H,W] mask replicated across channels."""
    if f.data.ndim != 3 or m.data.ndim != 3 or m.shape[0] != 1:
        raise ShapeError(f"broadcast_mul_channelwise: got {f.shape} and {m.shape}")
    if f.shape[1:] != m.shape[1:]:
        raise ShapeError(f"broadcast_mul_channelwise: spatial {f.shape[1:]} != {m.shape[1:]}")
    out = _make(f.data * m.data, (f, m), "bmul")
    if out.requires_grad:
        def _bw():
            if f.requires_grad:
                _accum_owned(f, out.grad * m.data)
            if m.requires_grad:
                _accum_owned(m, (out.grad * f.data).sum(axis=0, keepdims=True))
        out._backward = _bw
    return out


def one_minus(a):
    """1 - a elementwise, with double application exact.

    Floating subtraction alone does not satisfy 1-(1-x) == x (e.g. x=0.3
    in float64), so the op remembers its source values and recognizes its
    own output: inverting an inversion restores the original bits, which
    is also the algebraically exact result.  The derivative is -1 either
    way.
    """
    if a._inv_src is not None:
        data = a._inv_src.copy()
    else:
        data = 1.0 - a.data
    out = _make(data, (a,), "one_minus")
    out._inv_src = a.data.copy()
    if out.requires_grad:
        def _bw():
            _accum_owned(a, -out.grad)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear operators

def conv2d(x, k, b, stride=1, padding=0):
    """2-d convolution (cross-correlation) with zero padding.

    x: [C_in, H, W], k: [C_out, C_in, kH, kW], b: [C_out].
    Output spatial size: floor((H + 2*padding - kH) / stride) + 1.
    """
    if not isinstance(stride, int) or stride <= 0:
        raise ValueError(f"conv2d: stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"conv2d: padding must be a non-negative int, got {padding!r}")
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: need [C,H,W] input and [O,C,kH,kW] kernel, got {x.shape}, {k.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = k.shape
    if kc != c_in:
        raise ShapeError(f"conv2d: kernel expects {kc} input channels, input has {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({c_out},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2*padding}x{w + 2*padding}")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    xd = x.data
    if padding:
        xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
        xp[:, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(c_in, h_out, w_out, kh, kw),
        strides=(s0, s1 * stride, s2 * stride, s1, s2), writeable=False)
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, c_in * kh * kw)
    kmat = k.data.reshape(c_out, -1)
    y = (kmat @ patches.T).reshape(c_out, h_out, w_out)
    y += b.data[:, None, None]

    out = _make(y, (x, k, b), "conv2d")
    if out.requires_grad:
        def _bw():
            gm = out.grad.reshape(c_out, -1)            # [C_out, H'*W']
            if k.requires_grad:
                _accum_owned(k, (gm @ patches).reshape(k.shape))
            if b.requires_grad:
                _accum_owned(b, out.grad.sum(axis=(1, 2)))
            if x.requires_grad:
                dpatch = (gm.T @ kmat).reshape(h_out, w_out, c_in, kh, kw)
                gxp = np.zeros_like(xp)
                for ki in range(kh):
                    for kj in range(kw):
                        gxp[:, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride] += \
                            dpatch[:, :, :, ki, kj].transpose(2, 0, 1)
                _accum_owned(x, gxp[:, padding:padding + h, padding:padding + w]
                             if padding else gxp)
        out._backward = _bw
    return out


def dense(x, w, b):
    """Affine map y = W x + b for a flat input vector."""
    if x.data.ndim != 1 or w.data.ndim != 2:
        raise ShapeError(f"dense: need 1-d input and 2-d weight, got {x.shape}, {w.shape}")
    m, n = w.shape
    if x.shape != (n,):
        raise ShapeError(f"dense: weight expects input of length {n}, got {x.shape}")
    if b.shape != (m,):
        raise ShapeError(f"dense: bias shape {b.shape} != ({m},)")
    out = _make(w.data @ x.data + b.data, (x, w, b), "dense")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if w.requires_grad:
                _accum_owned(w, np.outer(g, x.data))
            if b.requires_grad:
                _accum(b, g)
            if x.requires_grad:
                _accum_owned(x, w.data.T @ g)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# softmax family

def softmax(a):
    """Max-shifted softmax over a 1-d logit vector."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError(f"softmax: need a non-empty 1-d vector, got shape {a.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    y = e / e.sum()
    out = _make(y, (a,), "softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum_owned(a, y * (g - np.dot(g, y)))
        out._backward = _bw
    return out


def log_softmax(a):
    """Log-probabilities from logits; stable counterpart to softmax."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise ShapeError(f"log_softmax: need a non-empty 1-d vector, got shape {a.shape}")
    z = a.data - a.data.max()
    lse = np.log(np.exp(z).sum())
    lp = z - lse
    out = _make(lp, (a,), "log_softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum_owned(a, g - np.exp(lp) * g.sum())
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# structural ops

def concat_channels(a, b):
    """Stack two [C,H,W] maps along the channel axis."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: spatial shapes differ: {a.shape}, {b.shape}")
    na = a.shape[0]
    out = _make(np.concatenate((a.data, b.data), axis=0), (a, b), "concat")
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad[:na])
            if b.requires_grad:
                _accum(b, out.grad[na:])
        out._backward = _bw
    return out


def slice_channels(a, lo, hi):
    """View of channels [lo, hi) of a [C,H,W] map."""
    if a.data.ndim != 3 or not (0 <= lo < hi <= a.shape[0]):
        raise ShapeError(f"slice_channels: range [{lo},{hi}) invalid for shape {a.shape}")
    out = _make(a.data[lo:hi], (a,), "slice")
    if out.requires_grad:
        def _bw():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[lo:hi] += out.grad
        out._backward = _bw
    return out


def reshape(a, shape):
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def _bw():
            _accum(a, out.grad.reshape(a.shape))
        out._backward = _bw
    return out


def sum_all(a):
    """Sum of all elements, as a scalar tensor."""
    out = _make(np.asarray(a.data.sum()), (a,), "sum")
    if out.requires_grad:
        def _bw():
            _accum(a, np.broadcast_to(out.grad, a.shape))
        out._backward = _bw
    return out


def pick(a, index):
    """Single element of a 1-d vector, as a scalar tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"pick: need a 1-d vector, got shape {a.shape}")
    if not (0 <= index < a.data.size):
        raise IndexError(f"pick: index {index} out of range for length {a.data.size}")
    out = _make(np.asarray(a.data[index]), (a,), "pick")
    if out.requires_grad:
        def _bw():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[index] += out.grad
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def backward(loss):
    """Populate .grad on every requires_grad leaf reachable from ``loss``.

    Grads accumulate across calls until cleared with ``zero_grads``.  A
    given graph may be traversed once; rerunning raises GraphError.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward: this graph was already consumed")
    loss._consumed = True

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def zero_grads(tensors):
    """Drop gradient buffers on an iterable or mapping of tensors."""
    if hasattr(tensors, "values"):
        tensors = tensors.values()
    for t in tensors:
        t.grad = None


def grad_check(f, params, eps=1e-5, n_samples=100, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the parameter dict to a scalar loss tensor and must be
    deterministic.  Coordinates are sampled uniformly over all parameter
    elements; relative error uses |a - n| / max(|a|, |n|, 1e-8).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in params.values():
        t.requires_grad = True
    zero_grads(params)
    backward(f(params))
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()}

    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_samples, total), replace=False)

    worst = 0.0
    for c in coords:
        ti = int(np.searchsorted(offsets, c, side="right") - 1)
        name = names[ti]
        flat = params[name].data.reshape(-1)
        i = int(c - offsets[ti])
        saved = flat[i]
        flat[i] = saved + eps
        hi = f(params).data.reshape(())
        flat[i] = saved - eps
        lo = f(params).data.reshape(())
        flat[i] = saved
        # difference in the working dtype: float() here would clip an
        # extended-precision run back to double and reintroduce noise
        numeric = float((hi - lo) / (2.0 * eps))
        a = float(analytic[name].reshape(-1)[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
