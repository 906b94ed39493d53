"""Minimal reverse-mode autodiff over real float64 numpy arrays.

Covers exactly the operations the precoding network graph needs. The
computation graph is recorded implicitly: every tensor produced by an
operation keeps references to its parents and a closure that pushes the
output gradient back to them. ``backward`` on a scalar loss walks that
record once in reverse topological order; gradient accumulation is
additive, so a tensor feeding several consumers receives the sum of all
path gradients. Tensors whose inputs do not require gradients carry no
graph at all, which makes frozen-parameter forward passes plain numpy.

Complex signals are handled upstream as (real, imaginary) tensor pairs;
everything here is real-valued.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError, ShapeError

LEAKY_SLOPE = 0.3


class Tensor:
    """Real-valued tensor with an optional gradient buffer.

    ``grad`` is allocated (zero-filled) iff ``requires_grad`` is set.
    Repeated ``backward`` calls without ``zero_grad`` accumulate.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        self.requires_grad = bool(flag)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable gradient buffer.

        Leaf gradients accumulate across calls; op-output gradients are
        transient and recomputed on every pass.
        """
        if self.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if self.grad is None:
            # loss of constants only: nothing to do
            return
        order = _toposort(self)
        for node in order:
            if node._bwd is not None and node.grad is not None:
                node.grad.fill(0.0)
        self.grad += 1.0
        for node in order:
            if node._bwd is not None:
                node._bwd(node.grad)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _toposort(root: Tensor) -> list:
    """Reverse topological order from root; iterative (graphs can be deep)."""
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    loss.backward()


def _make(data, parents, bwd) -> Tensor:
    """Wrap an op result; attach the graph only if some input needs it."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting semantics)

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.shape)

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad -= g

    return _make(-a.data, (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad += g * (2.0 * a.data)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; the derivative at exactly 0 is defined as 0."""
    root = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            safe = np.where(root > 0.0, root, 1.0)
            a.grad += np.where(root > 0.0, 0.5 * g / safe, 0.0)

    return _make(root, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad += g / a.data

    return _make(np.log(a.data), (a,), bwd)


def cos(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad -= g * np.sin(a.data)

    return _make(np.cos(a.data), (a,), bwd)


def sin(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad += g * np.cos(a.data)

    return _make(np.sin(a.data), (a,), bwd)


def cos_sin(a: Tensor) -> tuple[Tensor, Tensor]:
    """Elementwise (cos x, sin x), both differentiable."""
    return cos(a), sin(a)


def leaky_relu(a: Tensor) -> Tensor:
    """x for x >= 0, else 0.3x; the derivative at exactly 0 is 1."""
    pos = a.data >= 0.0
    data = np.where(pos, a.data, LEAKY_SLOPE * a.data)

    def bwd(g):
        if a.requires_grad:
            a.grad += g * np.where(pos, 1.0, LEAKY_SLOPE)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product, or a batched product when both operands are 3-D."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: batched shapes disagree, {a.shape} x {b.shape}")
    else:
        raise ShapeError(f"matmul: expected both 2-D or both 3-D, got {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            b.grad += np.swapaxes(a.data, -1, -2) @ g

    return _make(data, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """W x + b for a vector x, or the row-wise map X W^T + b for X of shape (B, n)."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    m, n = w.shape
    if b.shape != (m,):
        raise ShapeError(f"affine: bias shape {b.shape} does not match weight rows {m}")
    if x.ndim == 1:
        if x.shape != (n,):
            raise ShapeError(f"affine: input shape {x.shape} does not match weight cols {n}")
        data = w.data @ x.data + b.data

        def bwd(g):
            if x.requires_grad:
                x.grad += w.data.T @ g
            if w.requires_grad:
                w.grad += np.outer(g, x.data)
            if b.requires_grad:
                b.grad += g

        return _make(data, (x, w, b), bwd)
    if x.ndim == 2:
        if x.shape[1] != n:
            raise ShapeError(f"affine: input shape {x.shape} does not match weight cols {n}")
        data = x.data @ w.data.T + b.data

        def bwd(g):
            if x.requires_grad:
                x.grad += g @ w.data
            if w.requires_grad:
                w.grad += g.T @ x.data
            if b.requires_grad:
                b.grad += g.sum(axis=0)

        return _make(data, (x, w, b), bwd)
    raise ShapeError(f"affine: input must be 1-D or 2-D, got {x.shape}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Width-3 cross-correlation with zero padding 1; output length equals input.

    ``x`` is (C_in, L) or batched (B, C_in, L); ``kernels`` is (C_out, C_in, 3).
    """
    x, kernels, bias = _coerce(x), _coerce(kernels), _coerce(bias)
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv1d: input must be (C_in, L) or (B, C_in, L), got {x.shape}")
    co, ci, kw = kernels.shape
    if kw != 3:
        raise ShapeError(f"conv1d: kernel width must be 3, got {kw}")
    if xd.shape[1] != ci:
        raise ShapeError(f"conv1d: input channels {xd.shape[1]} != kernel channels {ci} "
                         f"(input {x.shape}, kernels {kernels.shape})")
    length = xd.shape[2]
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1)))
    data = np.empty((xd.shape[0], co, length))
    data[:] = bias.data[None, :, None]
    for t in range(3):
        data += np.einsum("oc,bcl->bol", kernels.data[:, :, t], xp[:, :, t:t + length])

    def bwd(g):
        gb = g[None] if single else g
        if kernels.requires_grad or x.requires_grad:
            if x.requires_grad:
                gxp = np.zeros_like(xp)
            for t in range(3):
                if kernels.requires_grad:
                    kernels.grad[:, :, t] += np.einsum("bol,bcl->oc", gb, xp[:, :, t:t + length])
                if x.requires_grad:
                    gxp[:, :, t:t + length] += np.einsum("oc,bol->bcl", kernels.data[:, :, t], gb)
            if x.requires_grad:
                gx = gxp[:, :, 1:1 + length]
                x.grad += gx[0] if single else gx
        if bias.requires_grad:
            bias.grad += gb.sum(axis=(0, 2))

    return _make(data[0] if single else data, (x, kernels, bias), bwd)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation with zero padding 1, preserving the spatial size.

    ``x`` is (C_in, H, W) or batched (B, C_in, H, W); ``kernels`` is
    (C_out, C_in, 3, 3).
    """
    x, kernels, bias = _coerce(x), _coerce(kernels), _coerce(bias)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    co, ci, kh, kw = kernels.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d: kernels must be 3x3, got {kh}x{kw}")
    if xd.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != kernel channels {ci} "
                         f"(input {x.shape}, kernels {kernels.shape})")
    h, w = xd.shape[2], xd.shape[3]
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    data = np.empty((xd.shape[0], co, h, w))
    data[:] = bias.data[None, :, None, None]
    for u in range(3):
        for v in range(3):
            data += np.einsum("oc,bchw->bohw", kernels.data[:, :, u, v],
                              xp[:, :, u:u + h, v:v + w])

    def bwd(g):
        gb = g[None] if single else g
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                if kernels.requires_grad:
                    kernels.grad[:, :, u, v] += np.einsum(
                        "bohw,bchw->oc", gb, xp[:, :, u:u + h, v:v + w])
                if x.requires_grad:
                    gxp[:, :, u:u + h, v:v + w] += np.einsum(
                        "oc,bohw->bchw", kernels.data[:, :, u, v], gb)
        if x.requires_grad:
            gx = gxp[:, :, 1:1 + h, 1:1 + w]
            x.grad += gx[0] if single else gx
        if bias.requires_grad:
            bias.grad += gb.sum(axis=(0, 2, 3))

    return _make(data[0] if single else data, (x, kernels, bias), bwd)


# ---------------------------------------------------------------------------
# shape manipulation and reductions

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.grad += g.reshape(a.shape)

    return _make(data, (a,), bwd)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a.grad += g.transpose(inv)

    return _make(a.data.transpose(axes), (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {a.shape}")
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return permute(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]

    return _make(data, tuple(tensors), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += np.take(g, i, axis=axis)

    return _make(data, tuple(tensors), bwd)


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Take one slab along an axis (drops that axis)."""
    data = np.take(a.data, index, axis=axis)

    def bwd(g):
        if a.requires_grad:
            idx = [slice(None)] * a.ndim
            idx[axis] = index
            a.grad[tuple(idx)] += g

    return _make(data, (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along an axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        if a.requires_grad:
            a.grad[idx] += g

    return _make(a.data[idx], (a,), bwd)


def diagonal(a: Tensor) -> Tensor:
    """Diagonal of the last two (square) axes: (..., K, K) -> (..., K)."""
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"diagonal needs square trailing dims, got {a.shape}")
    k = a.shape[-1]
    data = np.ascontiguousarray(np.diagonal(a.data, axis1=-2, axis2=-1))
    rng = np.arange(k)

    def bwd(g):
        if a.requires_grad:
            a.grad[..., rng, rng] += g

    return _make(data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.grad += g  # g is scalar, broadcasts

    return _make(a.data.sum(), (a,), bwd)


def sum_axes(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axes)
            a.grad += np.broadcast_to(gg, a.shape)

    return _make(data, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), 1.0 / a.size)
