"""Dense tensor engine with reverse-mode differentiation.

A small numpy-backed autodiff core: `Tensor` carries values and an optional
gradient, `Tape` records every op applied while it is active and replays the
records in reverse to accumulate gradients. All ops are module-level
functions; layers compose them and never touch numpy gradients directly.

The global float dtype is switchable: float64 for verification (gradient
checks, oracle comparisons), float32 for training throughput.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError",
    "set_default_dtype", "get_default_dtype", "default_dtype",
    "as_tensor", "add", "mul", "scalar_mul", "matmul", "transpose",
    "relu", "leaky_relu", "elu", "sigmoid", "exp", "sqrt", "sin", "cos",
    "dropout", "conv1d", "depthwise_separable_conv1d", "conv1d_output_length",
    "gather_rows", "scatter_reduce", "segment_softmax", "standardize_columns",
    "cross_entropy", "reduce_sum", "concat", "slice_axis", "reshape",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when an op receives geometrically impossible arguments."""


_DEFAULT_DTYPE = np.dtype(np.float64)


def set_default_dtype(dtype) -> np.dtype:
    """Set the float dtype new tensors are created with; returns the old one."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dt}")
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dt
    return old


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class default_dtype:
    """Context manager pinning the default dtype within a block."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._old = None

    def __enter__(self):
        self._old = set_default_dtype(self._dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._old)
        return False


class Tensor:
    """Value holder. Gradients accumulate into `.grad` during Tape.backward."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, values: np.ndarray) -> "Tensor":
        # internal: adopt an array without recasting (op outputs)
        t = cls.__new__(cls)
        t.values = values
        t.grad = None
        t.requires_grad = False
        return t

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}, requires_grad={self.requires_grad})"

    # light operator sugar; delegates to module ops
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scalar_mul(as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# --------------------------------------------------------------------------
# tape

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of differentiable ops.

    Usage::

        with Tape() as tape:
            loss = model(...)
        tape.backward(loss)
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss: Tensor):
        if loss.values.size != 1:
            raise ShapeError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.values)
        for out, inputs, fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.values)
                t.grad += g


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# segment primitives (numpy level, shared by scatter/softmax ops)

def _segment_sum(vals: np.ndarray, seg: np.ndarray, n_seg: int) -> np.ndarray:
    """Sum rows of `vals` into `n_seg` buckets. Empty buckets are zero.

    Uses stable sort + reduceat; np.add.at is far too slow at training sizes
    and bincount would force float64.
    """
    out_shape = (n_seg,) + vals.shape[1:]
    if vals.shape[0] == 0:
        return np.zeros(out_shape, dtype=vals.dtype)
    if seg.shape[0] != vals.shape[0]:
        raise ShapeError("segment ids must align with rows")
    order = np.argsort(seg, kind="stable")
    vs = vals[order]
    ss = seg[order]
    counts = np.bincount(ss, minlength=n_seg)
    starts = np.zeros(n_seg, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    out = np.zeros(out_shape, dtype=vals.dtype)
    nonempty = counts > 0
    if nonempty.any():
        out[nonempty] = np.add.reduceat(vs, starts[nonempty], axis=0)
    return out


def _segment_max(vals: np.ndarray, seg: np.ndarray, n_seg: int):
    """Per-bucket max and the original row index attaining it first.

    Returns (maxs, argmax); empty buckets give max 0 and argmax -1. Ties
    resolve to the smallest original row index.
    """
    tail = vals.shape[1:]
    maxs = np.zeros((n_seg,) + tail, dtype=vals.dtype)
    argmax = np.full((n_seg,) + tail, -1, dtype=np.int64)
    m = vals.shape[0]
    if m == 0:
        return maxs, argmax
    order = np.argsort(seg, kind="stable")
    vs = vals[order]
    ss = seg[order]
    counts = np.bincount(ss, minlength=n_seg)
    starts = np.zeros(n_seg, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    nonempty = counts > 0
    maxs[nonempty] = np.maximum.reduceat(vs, starts[nonempty], axis=0)
    # first original index attaining the bucket max
    orig = order if not tail else np.broadcast_to(order[:, None], vs.shape)
    hit = vs == maxs[ss]
    cand = np.where(hit, orig, m)
    first = np.minimum.reduceat(cand, starts[nonempty], axis=0)
    argmax[nonempty] = first
    return maxs, argmax


# --------------------------------------------------------------------------
# elementwise and linear ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._wrap(a.values + b.values)

    def backward(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._wrap(a.values * b.values)

    def backward(g):
        return (_unbroadcast(g * b.values, a.values.shape),
                _unbroadcast(g * a.values, b.values.shape))

    return _record(out, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._wrap(a.values * c)

    def backward(g):
        return (g * c,)

    return _record(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError("matmul expects 2-d operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.values.shape} @ {b.values.shape}")
    out = Tensor._wrap(a.values @ b.values)

    def backward(g):
        return g @ b.values.T, a.values.T @ g

    return _record(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError("transpose expects a 2-d tensor")
    out = Tensor._wrap(np.ascontiguousarray(a.values.T))

    def backward(g):
        return (g.T,)

    return _record(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.values, 0))

    def backward(g):
        return (g * (a.values > 0),)

    return _record(out, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    v = a.values
    out = Tensor._wrap(np.where(v > 0, v, slope * v))

    def backward(g):
        return (g * np.where(v > 0, 1.0, slope).astype(v.dtype),)

    return _record(out, (a,), backward)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    v = a.values
    neg = alpha * np.expm1(np.minimum(v, 0))
    out_vals = np.where(v > 0, v, neg)
    out = Tensor._wrap(out_vals)

    def backward(g):
        return (g * np.where(v > 0, 1.0, neg + alpha).astype(v.dtype),)

    return _record(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    v = a.values
    s = np.empty_like(v)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    s[~pos] = ev / (1.0 + ev)
    out = Tensor._wrap(s)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _record(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.values)
    out = Tensor._wrap(e)

    def backward(g):
        return (g * e,)

    return _record(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.values)
    out = Tensor._wrap(r)

    def backward(g):
        return (g * 0.5 / r,)

    return _record(out, (a,), backward)


def sin(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.sin(a.values))

    def backward(g):
        return (g * np.cos(a.values),)

    return _record(out, (a,), backward)


def cos(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.cos(a.values))

    def backward(g):
        return (g * -np.sin(a.values),)

    return _record(out, (a,), backward)


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: keeps scale by 1/(1-p); identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(a.values.shape) >= p).astype(a.values.dtype)
    scale = 1.0 / (1.0 - p)
    out = Tensor._wrap(a.values * keep * scale)

    def backward(g):
        return (g * keep * scale,)

    return _record(out, (a,), backward)


# --------------------------------------------------------------------------
# convolution

def conv1d_output_length(n_in: int, kernel: int, padding: int = 0, stride: int = 1) -> int:
    if n_in + 2 * padding < kernel:
        raise ShapeError(
            f"conv input too short: n={n_in}, kernel={kernel}, padding={padding}")
    return (n_in + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-d cross-correlation. x: [C_in, n], weight: [C_out, C_in, k], bias: [C_out].

    Implemented as k shifted matmuls (im2col would blow memory at document
    scale).
    """
    if x.values.ndim != 2 or weight.values.ndim != 3:
        raise ShapeError("conv1d expects x [C_in, n] and weight [C_out, C_in, k]")
    c_in, n = x.values.shape
    c_out, c_in_w, k = weight.values.shape
    if c_in_w != c_in:
        raise ShapeError(f"channel mismatch: x has {c_in}, weight expects {c_in_w}")
    n_out = conv1d_output_length(n, k, padding, stride)

    xp = np.pad(x.values, ((0, 0), (padding, padding))) if padding else x.values
    span = stride * (n_out - 1) + 1
    # per-tap weight slices have no unit-stride axis, which knocks matmul off
    # the BLAS path; contiguous copies are 16 KB each and ~25x faster
    taps = [np.ascontiguousarray(weight.values[:, :, j]) for j in range(k)]
    out_vals = np.zeros((c_out, n_out), dtype=x.values.dtype)
    for j in range(k):
        out_vals += taps[j] @ xp[:, j:j + span:stride]
    if bias is not None:
        out_vals += bias.values[:, None]
    out = Tensor._wrap(out_vals)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(weight.values)
        for j in range(k):
            sl = slice(j, j + span, stride)
            dw[:, :, j] = g @ xp[:, sl].T
            dxp[:, sl] += taps[j].T @ g
        dx = dxp[:, padding:padding + n] if padding else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=1)

    return _record(out, inputs, backward)


def _depthwise_conv1d(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    # x: [C, n], weight: [C, k]; each channel convolved with its own kernel
    c, n = x.values.shape
    cw, k = weight.values.shape
    if cw != c:
        raise ShapeError("depthwise weight must have one kernel per channel")
    n_out = conv1d_output_length(n, k, padding, stride)
    xp = np.pad(x.values, ((0, 0), (padding, padding))) if padding else x.values
    span = stride * (n_out - 1) + 1
    wv = weight.values
    out_vals = np.zeros((c, n_out), dtype=x.values.dtype)
    for j in range(k):
        out_vals += wv[:, j:j + 1] * xp[:, j:j + span:stride]
    out = Tensor._wrap(out_vals)

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wv)
        for j in range(k):
            sl = slice(j, j + span, stride)
            dw[:, j] = (g * xp[:, sl]).sum(axis=1)
            dxp[:, sl] += wv[:, j:j + 1] * g
        dx = dxp[:, padding:padding + n] if padding else dxp
        return dx, dw

    return _record(out, (x, weight), backward)


def depthwise_separable_conv1d(x: Tensor, depth_weight: Tensor, point_weight: Tensor,
                               bias: Tensor | None = None,
                               stride: int = 1, padding: int = 0) -> Tensor:
    """Depthwise conv per channel followed by a 1x1 pointwise mix.

    x: [C_in, n], depth_weight: [C_in, k], point_weight: [C_out, C_in].
    """
    y = _depthwise_conv1d(x, depth_weight, stride, padding)
    z = matmul(point_weight, y)
    if bias is not None:
        z = add(z, reshape(bias, (bias.values.shape[0], 1)))
    return z


# --------------------------------------------------------------------------
# gather / scatter / segment ops

def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("gather_rows expects a 1-d index")
    out = Tensor._wrap(x.values[index])
    n = x.values.shape[0]

    def backward(g):
        return (_segment_sum(g, index, n),)

    return _record(out, (x,), backward)


def scatter_reduce(x: Tensor, index: np.ndarray, n_out: int, mode: str = "sum") -> Tensor:
    """Reduce rows of x into n_out buckets by `index`.

    Modes: "sum", "mean" (empty buckets zero), "max" (empty buckets zero;
    backward routes each bucket's gradient to the first row attaining the
    max).
    """
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.values.shape[0]:
        raise ShapeError("index must align with rows of x")
    if mode == "sum":
        out = Tensor._wrap(_segment_sum(x.values, index, n_out))

        def backward(g):
            return (g[index],)

    elif mode == "mean":
        counts = np.bincount(index, minlength=n_out).astype(x.values.dtype)
        sums = _segment_sum(x.values, index, n_out)
        denom = np.maximum(counts, 1.0)
        shape = (n_out,) + (1,) * (x.values.ndim - 1)
        out = Tensor._wrap(sums / denom.reshape(shape))

        def backward(g):
            return (g[index] / denom.reshape(shape)[index],)

    elif mode == "max":
        maxs, argmax = _segment_max(x.values, index, n_out)
        out = Tensor._wrap(maxs)

        def backward(g):
            dx = np.zeros_like(x.values)
            valid = argmax >= 0
            if x.values.ndim == 1:
                dx[argmax[valid]] += g[valid]
            else:
                cols = np.broadcast_to(np.arange(x.values.shape[1]), argmax.shape)
                np.add.at(dx, (argmax[valid], cols[valid]), g[valid])
            return (dx,)

    else:
        raise ValueError(f"unknown scatter mode {mode!r}")
    return _record(out, (x,), backward)


def segment_softmax(scores: Tensor, segments: np.ndarray, n_segments: int,
                    scale: float = 1.0) -> Tensor:
    """Softmax within each segment, then multiplied by `scale`.

    Per-segment outputs therefore sum to exactly `scale` (up to float error).
    Max-shifted for stability.
    """
    segments = np.asarray(segments, dtype=np.int64)
    v = scores.values
    if v.ndim != 1:
        raise ShapeError("segment_softmax expects 1-d scores")
    maxs, _ = _segment_max(v, segments, n_segments)
    e = np.exp(v - maxs[segments])
    denom = _segment_sum(e, segments, n_segments)
    p = e / denom[segments]
    out = Tensor._wrap(p * scale)

    def backward(g):
        dot = _segment_sum(p * g, segments, n_segments)
        return (scale * p * (g - dot[segments]),)

    return _record(out, (scores,), backward)


def standardize_columns(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Column-wise (x - mean) / sqrt(var + eps) with population variance."""
    v = x.values
    if v.ndim != 2:
        raise ShapeError("standardize_columns expects a 2-d tensor")
    n = v.shape[0]
    mean = v.mean(axis=0)
    var = v.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    y = (v - mean) * inv
    out = Tensor._wrap(y)

    def backward(g):
        gm = g.mean(axis=0)
        gym = (g * y).mean(axis=0)
        return (inv * (g - gm - y * gym),)

    return _record(out, (x,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over rows; fused log-softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    v = logits.values
    if v.ndim != 2 or labels.shape[0] != v.shape[0]:
        raise ShapeError("cross_entropy expects logits [B, C] and labels [B]")
    b = v.shape[0]
    m = v.max(axis=1, keepdims=True)
    z = v - m
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(denom)
    nll = -log_probs[np.arange(b), labels]
    out = Tensor._wrap(np.asarray(nll.mean(), dtype=v.dtype))

    def backward(g):
        probs = ez / denom
        probs[np.arange(b), labels] -= 1.0
        return (probs * (g / b),)

    return _record(out, (logits,), backward)


# --------------------------------------------------------------------------
# shape ops

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor._wrap(x.values.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.values.shape).copy(),)

    return _record(out, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor._wrap(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _record(out, tuple(tensors), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.values.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor._wrap(x.values[sl].copy())

    def backward(g):
        dx = np.zeros_like(x.values)
        dx[sl] = g
        return (dx,)

    return _record(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor._wrap(x.values.reshape(shape))

    def backward(g):
        return (g.reshape(x.values.shape),)

    return _record(out, (x,), backward)


# --------------------------------------------------------------------------
# numeric gradient verification

def grad_check(fn, params, h: float = 1e-5, sample: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of scalar fn() against central differences.

    fn must be deterministic and re-evaluable. When `sample` is given, only
    that many coordinates per parameter are perturbed (uniformly chosen).
    Returns the max relative error max(|a-n| / max(|a|,|n|,1e-8)).
    """
    if get_default_dtype() != np.dtype(np.float64):
        raise ValueError("grad_check requires float64 default dtype")
    with Tape() as tape:
        out = fn()
        tape.backward(out)
    analytic = []
    for p in params:
        analytic.append(p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        p.zero_grad()

    worst = 0.0
    for p, a in zip(params, analytic):
        flat_v = p.values.reshape(-1)
        flat_a = a.reshape(-1)
        if sample is not None and sample < flat_v.size:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat_v.size, size=sample, replace=False)
        else:
            coords = range(flat_v.size)
        for i in coords:
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(fn().values)
            flat_v[i] = orig - h
            f_minus = float(fn().values)
            flat_v[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            an = float(flat_a[i])
            rel = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
