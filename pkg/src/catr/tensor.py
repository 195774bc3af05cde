"""Dense tensor engine with reverse-mode differentiation.

numpy arrays are the storage substrate; every differentiable operation
records a backward closure so that ``Tensor.backward()`` can replay the
tape in reverse topological order. Gradient checking runs at float64,
training may run at float32.

Broadcasting is deliberately restricted: scalar-tensor and trailing-axis
expansion (the second operand's shape is a suffix of the first's) are the
only allowed shape mixes. Anything else raises DimensionError.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite math was required."""


_ALLOWED_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """n-d array plus optional participation in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward_fn: Optional[Callable] = None):
        self.data = _as_array(data, dtype)
        if self.data.dtype not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {self.data.dtype}")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff -------------------------------------------------------------

    def backward(self, seed: Optional[np.ndarray] = None):
        """Reverse-mode sweep from this tensor.

        Accumulates into ``.grad`` of every reachable leaf with
        requires_grad. Deterministic: the tape order is fixed by forward
        execution order and traversal is iterative (no recursion limits).
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            raise DimensionError(f"seed shape {seed.shape} != output shape {self.data.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _needs_tape(self) -> bool:
        return self.requires_grad and _grad_enabled

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis):
        return mean_pool(self, axis)


def tensor(data, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward_fn=backward_fn)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# -- broadcasting policy -------------------------------------------------------

def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> int:
    """Return number of leading axes of `a` that `b` is expanded over.

    0 means identical shapes. b scalar and trailing-suffix expansion of b
    over a are the only other legal cases.
    """
    if a.shape == b.shape:
        return 0
    if b.ndim == 0:
        return a.ndim
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return a.ndim - b.ndim
    raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not conform "
                         "(only scalar or trailing-axis expansion allowed)")


def _reduce_to(g: np.ndarray, lead: int, shape) -> np.ndarray:
    if lead == 0:
        return g
    out = g.sum(axis=tuple(range(lead)))
    return out.reshape(shape)


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a, b = b, a
    a = _coerce(a, np.float64)
    b = _coerce(b, a.data.dtype)
    lead = _broadcast_check(a, b, "add")
    out = a.data + b.data

    def bw(g):
        ga = g if a.requires_grad else None
        gb = _reduce_to(g, lead, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a, b = b, a
    a = _coerce(a, np.float64)
    b = _coerce(b, a.data.dtype)
    lead = _broadcast_check(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        ga = g * b.data if a.requires_grad else None
        gb = _reduce_to(g * a.data, lead, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-d is the base contract; identical leading (batch)
    axes are also accepted and contracted as stacked matmuls."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] \
            or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw)


# -- shape plumbing --------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    orig = x.shape

    def bw(g):
        return (g.reshape(orig),)

    return _result(out, (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inv),)

    return _result(out, (x,), bw)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise DimensionError("concat: empty input list")
    base = list(xs[0].shape)
    for x in xs[1:]:
        s = list(x.shape)
        s[axis] = base[axis]
        if s != base:
            raise DimensionError(f"concat: shape {x.shape} incompatible with {xs[0].shape} on axis {axis}")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        grads = []
        for i, x in enumerate(xs):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return tuple(grads)

    return _result(out, tuple(xs), bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(f"narrow: [{start}, {start + length}) out of range for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    out = np.ascontiguousarray(x.data[tuple(sl)])

    def bw(g):
        full = np.zeros_like(x.data)
        full[tuple(sl)] = g
        return (full,)

    return _result(out, (x,), bw)


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Repeat a size-1 axis n times."""
    if x.shape[axis] != 1:
        raise DimensionError(f"expand: axis {axis} of {x.shape} is not 1")
    reps = [1] * x.ndim
    reps[axis] = n
    out = np.tile(x.data, reps)

    def bw(g):
        return (g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), bw)


# -- pointwise nonlinearities -----------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result(out, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bw)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    out = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return _result(out, (x,), bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def bw(g):
        return (g * mask,)

    return _result(out, (x,), bw)


def power(x: Tensor, p: float) -> Tensor:
    """x ** p for strictly positive x."""
    if np.any(x.data <= 0):
        raise NumericError("power: non-positive base")
    out = np.power(x.data, p)

    def bw(g):
        return (g * p * np.power(x.data, p - 1.0),)

    return _result(out, (x,), bw)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _result(out, (x,), bw)


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Normalize to zero mean / unit variance along `axis` (no affine)."""
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.shape[axis]

    def bw(g):
        gmean = g.mean(axis=axis, keepdims=True)
        gdot = (g * xhat).mean(axis=axis, keepdims=True)
        return ((g - gmean - xhat * gdot) * inv,)

    _ = n
    return _result(xhat, (x,), bw)


# -- reductions --------------------------------------------------------------------

def tsum(x: Tensor, axis=None) -> Tensor:
    if axis is None:
        out = np.asarray(x.data.sum(), dtype=x.data.dtype)

        def bw(g):
            return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

        return _result(out, (x,), bw)
    out = x.data.sum(axis=axis)

    def bw_axis(g):
        return (np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis),)

    return _result(out, (x,), bw_axis)


def mean_pool(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def bw(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,)

    return _result(out, (x,), bw)


# -- affine / convolution -----------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ w[in, out] (+ b[out])."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input dim {x.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} vs weight {w.shape}")
        out = out + b.data
    out = out.reshape(*lead, w.shape[1])

    def bw(g):
        gf = g.reshape(-1, w.shape[1])
        gx = (gf @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ gf if w.requires_grad else None
        gb = gf.sum(axis=0) if (b is not None and b.requires_grad) else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, bw)


_COL_INDEX_CACHE: dict = {}


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _col_indices(h, w, kh, kw, stride, pt, pl):
    key = (h, w, kh, kw, stride, pt, pl)
    cached = _COL_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    ho = -(-h // stride)
    wo = -(-w // stride)
    base_y = (np.arange(ho) * stride)[:, None, None, None]
    base_x = (np.arange(wo) * stride)[None, :, None, None]
    off_y = np.arange(kh)[None, None, :, None]
    off_x = np.arange(kw)[None, None, None, :]
    iy = (base_y + off_y + np.zeros_like(base_x) + np.zeros_like(off_x)).reshape(ho * wo, kh * kw)
    ix = (base_x + off_x + np.zeros_like(base_y) + np.zeros_like(off_y)).reshape(ho * wo, kh * kw)
    _COL_INDEX_CACHE[key] = (ho, wo, iy, ix)
    return ho, wo, iy, ix


def _valid_indices(h: int, w: int, kh: int, kw: int):
    key = ("valid", h, w, kh, kw)
    cached = _COL_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    ho, wo = h - kh + 1, w - kw + 1
    iy = (np.arange(ho)[:, None, None, None] + np.arange(kh)[None, None, :, None]
          + np.zeros((1, wo, 1, kw), dtype=int)).reshape(ho * wo, kh * kw)
    ix = (np.arange(wo)[None, :, None, None] + np.arange(kw)[None, None, None, :]
          + np.zeros((ho, 1, kh, 1), dtype=int)).reshape(ho * wo, kh * kw)
    _COL_INDEX_CACHE[key] = (iy, ix)
    return iy, ix


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """2-d cross-correlation, NHWC layout, SAME padding.

    x: (N, H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout,).
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    pt, pb = _same_pads(h, kh, stride)
    pl, pr = _same_pads(wd, kw, stride)
    padded = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ho, wo, iy, ix = _col_indices(h, wd, kh, kw, stride, pt, pl)
    cols = padded[:, iy, ix, :].reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias {b.shape} vs kernel {w.shape}")
        out = out + b.data
    out = out.reshape(n, ho, wo, cout)

    def bw(g):
        gf = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ gf).reshape(w.shape) if w.requires_grad else None
        gb = gf.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            if stride == 1:
                # input grad = valid correlation of the padded output grad
                # with the flipped, channel-swapped kernel (BLAS, no scatter)
                gext = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
                jy, jx = _valid_indices(gext.shape[1], gext.shape[2], kh, kw)
                gcols = gext[:, jy, jx, :].reshape(n * padded.shape[1] * padded.shape[2],
                                                   kh * kw * cout)
                kmat = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
                gpad = (gcols @ kmat).reshape(n, padded.shape[1], padded.shape[2], cin)
            else:
                gcols = (gf @ wmat.T).reshape(n, ho * wo, kh * kw, cin)
                gpad = np.zeros_like(padded)
                np.add.at(gpad, (slice(None), iy, ix), gcols)
            gx = gpad[:, pt:pt + h, pl:pl + wd, :]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(out, parents, bw)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """k-by-k non-overlapping average pooling; spatial dims must divide by k."""
    n, h, w, c = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def bw(g):
        up = np.repeat(np.repeat(g, k, axis=1), k, axis=2)
        return (up / (k * k),)

    return _result(out, (x,), bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Double spatial dims by pixel duplication (NHWC)."""
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bw(g):
        return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _result(out, (x,), bw)


# -- gradient checking ----------------------------------------------------------------

def gradcheck(f: Callable[..., Tensor], *tensors: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    f must return a scalar Tensor; inputs must be float64 for the finite
    differences to be trustworthy.
    """
    for t in tensors:
        if t.requires_grad and t.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 inputs")
        t.grad = None
    out = f(*tensors)
    if out.data.size != 1:
        raise ValueError("gradcheck: f must return a scalar")
    if not np.isfinite(out.item()):
        raise NumericError("gradcheck: non-finite function value")
    out.backward()

    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        analytic = (np.zeros_like(flat) if t.grad is None else t.grad.reshape(-1))
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = f(*tensors).item()
                flat[i] = orig - eps
                fm = f(*tensors).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("gradcheck: non-finite perturbed value")
            num = (fp - fm) / (2.0 * eps)
            err = abs(analytic[i] - num) / max(1.0, abs(num))
            if err > worst:
                worst = err
    return worst
