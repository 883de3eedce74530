"""Minimal reverse-mode autodiff over dense numpy arrays.

Covers exactly the operator set the surrogate and agent networks are
assembled from: affine maps, stride-2 valid convolution, ReLU/Tanh,
flatten/concat, elementwise arithmetic, and the reductions the losses
need.  Not a graph compiler — every op registers a closure and
``backward`` replays the tape in reverse topological order.

Float32 is the training dtype; gradient checking runs the same graph in
float64 (see ``grad_check``).
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError

__all__ = ["Tensor", "tensor", "concat", "minimum", "conv2d_valid", "grad_check"]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undo numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A numpy array plus the tape bookkeeping needed for one backward pass."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, parents=(), requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents if requires_grad else ()
        self._bw = None

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def _accumulate(self, g):
        # copy on first store: several ops hand the same buffer to two parents
        if self.grad is None:
            self.grad = np.array(_unbroadcast(g, self.data.shape), copy=True)
        else:
            self.grad += _unbroadcast(g, self.data.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Reverse pass seeding d(self)/d(self)=1; ``self`` must be scalar-sized."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.data.shape}")
        if not self.requires_grad:
            return
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
        for node in topo:
            node.grad = None  # a repeated backward re-derives, never accumulates
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bw is not None:
                node._bw(node.grad)

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _lift(x, like_dtype):
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like_dtype))

    def __add__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor(self.data + other.data, (self, other),
                     self.requires_grad or other.requires_grad)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g)
                if other.requires_grad:
                    other._accumulate(g)
            out._bw = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor(self.data - other.data, (self, other),
                     self.requires_grad or other.requires_grad)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g)
                if other.requires_grad:
                    other._accumulate(-g)
            out._bw = bw
        return out

    def __rsub__(self, other):
        return Tensor._lift(other, self.dtype) - self

    def __mul__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor(self.data * other.data, (self, other),
                     self.requires_grad or other.requires_grad)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g * other.data)
                if other.requires_grad:
                    other._accumulate(g * self.data)
            out._bw = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor(self.data / other.data, (self, other),
                     self.requires_grad or other.requires_grad)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g / other.data)
                if other.requires_grad:
                    other._accumulate(-g * self.data / (other.data * other.data))
            out._bw = bw
        return out

    def __rtruediv__(self, other):
        return Tensor._lift(other, self.dtype) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ShapeError("only scalar exponents are supported")
        out = Tensor(self.data ** p, (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g * p * self.data ** (p - 1))
        return out

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            raise ShapeError("matmul needs two Tensors")
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul is 2-D only, got {self.data.shape} @ {other.data.shape}")
        if self.data.shape[1] != other.data.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.data.shape} @ {other.data.shape}")
        out = Tensor(self.data @ other.data, (self, other),
                     self.requires_grad or other.requires_grad)
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ g)
            out._bw = bw
        return out

    # -- nonlinearities and reductions -------------------------------------

    def relu(self):
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0).astype(self.dtype, copy=False),
                     (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g * mask)
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g * y)
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g / self.data)
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes only where lo <= x <= hi (torch-style)."""
        mask = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g * mask)
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), self.requires_grad)
        if out.requires_grad:
            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape))
            out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, shape):
        out = Tensor(self.data.reshape(shape), (self,), self.requires_grad)
        if out.requires_grad:
            out._bw = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def flatten_batch(self):
        """(B, ...) -> (B, -1); the Flatten layer."""
        return self.reshape((self.data.shape[0], -1))


def tensor(data, requires_grad=False, dtype=None):
    """Public constructor: validates finiteness, optionally casts."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor() got non-finite entries")
    return Tensor(arr, requires_grad=requires_grad)


def concat(parts, axis=1):
    """Concatenate tensors along ``axis``; the Concat layer."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    datas = [p.data for p in parts]
    base = datas[0].shape
    for d in datas[1:]:
        if len(d.shape) != len(base) or d.shape[:axis] != base[:axis] or d.shape[axis + 1:] != base[axis + 1:]:
            raise ShapeError(f"concat shapes incompatible along axis {axis}: "
                             f"{[d.shape for d in datas]}")
    out = Tensor(np.concatenate(datas, axis=axis), tuple(parts),
                 any(p.requires_grad for p in parts))
    if out.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(a, b)
                    p._accumulate(g[tuple(sl)])
        out._bw = bw
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data), (a, b),
                 a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accumulate(g * mask)
            if b.requires_grad:
                b._accumulate(g * ~mask)
        out._bw = bw
    return out


def conv2d_valid(x: Tensor, w: Tensor, b: Tensor, stride: int = 2) -> Tensor:
    """Valid (no padding) 2-D convolution, square kernel, fixed stride.

    x: (B, C, H, W), w: (O, C, k, k), b: (O,).  Output spatial size follows
    floor((n - k)/stride) + 1.
    """
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernel, got {xd.shape}, {wd.shape}")
    B, C, H, W = xd.shape
    O, Cw, k, k2 = wd.shape
    if Cw != C or k != k2:
        raise ShapeError(f"kernel {wd.shape} incompatible with input {xd.shape}")
    if H < k or W < k:
        raise ShapeError(f"input {H}x{W} smaller than kernel {k}")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(xd, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                      # (B,C,Ho,Wo,k,k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)
    wmat = wd.reshape(O, C * k * k)
    y = (cols @ wmat.T + bd).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    out = Tensor(np.ascontiguousarray(y), (x, w, b),
                 x.requires_grad or w.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bw(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
            if b.requires_grad:
                b._accumulate(g2.sum(axis=0))
            if w.requires_grad:
                w._accumulate((g2.T @ cols).reshape(O, C, k, k))
            if x.requires_grad:
                dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
                dx = np.zeros_like(xd)
                for ki in range(k):
                    for kj in range(k):
                        dx[:, :, ki: ki + stride * (Ho - 1) + 1: stride,
                           kj: kj + stride * (Wo - 1) + 1: stride] += dcols[..., ki, kj]
                x._accumulate(dx)
        out._bw = bw
    return out


def grad_check(build, params, eps=1e-5, rel_floor=1e-6):
    """Compare reverse-mode gradients with central finite differences.

    ``build(leaves)`` maps name->Tensor leaves to a scalar Tensor; ``params``
    is name -> float64 array.  Returns the max relative error over every
    parameter entry; the floor keeps zero-gradient noise from dividing out.
    """
    leaves = {k: Tensor(v.astype(np.float64), requires_grad=True) for k, v in params.items()}
    out = build(leaves)
    out.backward()
    worst = 0.0
    for name, arr in params.items():
        arr = arr.astype(np.float64)
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            hi = build({k: Tensor(v if k != name else arr) for k, v in params.items()}).item()
            arr[idx] = orig - eps
            lo = build({k: Tensor(v if k != name else arr) for k, v in params.items()}).item()
            arr[idx] = orig
            numeric = (hi - lo) / (2 * eps)
            denom = max(abs(analytic[idx]), abs(numeric), rel_floor)
            worst = max(worst, abs(analytic[idx] - numeric) / denom)
    return worst
