"""Minimal array-valued reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient buffer of the same
shape. Operations record closures on a DAG; backward() runs them in
reverse topological order. Gradients are exact (the only stochastic layer,
dropout, multiplies by a pre-drawn constant mask), which is what the
finite-difference test suite checks layer by layer.

Float32 is the training precision; passing float64 arrays switches the
whole graph to 64-bit for gradient testing.
"""

from __future__ import annotations

import numpy as np


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basics ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def _child(self, data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- arithmetic ------------------------------------------------------
    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x))

    def __add__(self, other):
        other = self._wrap(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self.accumulate(_sum_to(g, self.shape))
            if other.requires_grad:
                other.accumulate(_sum_to(g, other.shape))

        return self._child(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self.accumulate(-g)

        return self._child(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self.accumulate(_sum_to(g * other.data, self.shape))
            if other.requires_grad:
                other.accumulate(_sum_to(g * self.data, other.shape))

        return self._child(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * self._wrap(other) ** -1.0

    def __rtruediv__(self, other):
        return self._wrap(other) * self**-1.0

    def __pow__(self, exponent: float):
        out_data = self.data**exponent

        def backward(g):
            self.accumulate(g * exponent * self.data ** (exponent - 1.0))

        return self._child(out_data, (self,), backward)

    def __matmul__(self, other):
        other = self._wrap(other)
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self.accumulate(g @ other.data.T)
            if other.requires_grad:
                other.accumulate(self.data.T @ g)

        return self._child(out_data, (self, other), backward)

    # -- elementwise -----------------------------------------------------
    def relu(self):
        mask = self.data > 0

        def backward(g):
            self.accumulate(g * mask)

        return self._child(np.where(mask, self.data, 0), (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self.accumulate(g * out_data)

        return self._child(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self.accumulate(g / self.data)

        return self._child(np.log(self.data), (self,), backward)

    def sqrt(self):
        return self**0.5

    # -- reductions and reshaping ----------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self.accumulate(np.broadcast_to(g, self.shape))
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(gg, self.shape))

        return self._child(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def backward(g):
            self.accumulate(g.reshape(old))

        return self._child(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)

        def backward(g):
            self.accumulate(g.transpose(inverse))

        return self._child(self.data.transpose(axes), (self,), backward)

    @property
    def T(self):
        return self.transpose(tuple(range(self.ndim))[::-1])

    # -- graph execution ---------------------------------------------------
    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise RuntimeError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise RuntimeError("backward() before any differentiable forward pass")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis, with gradient split on backward."""
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._parents = tuple(tensors)
        out._backward = backward
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Length-preserving 1-d convolution.

    x: (B, C_in, L); weight: (C_out, C_in, K); bias: (C_out,).
    Padding (K-1)//2 left and K//2 right keeps the output length at L.
    """
    b, c_in, length = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, weight expects {c_in_w}")
    pad_l, pad_r = (k - 1) // 2, k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_l, pad_r)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (B, C_in, L, K)
    out_data = np.einsum("bclk,ock->bol", windows, weight.data, optimize=True)
    out_data += bias.data[None, :, None]

    def backward(g):
        if weight.requires_grad:
            weight.accumulate(np.einsum("bol,bclk->ock", g, windows, optimize=True))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gx = np.zeros_like(xp)
            for j in range(k):
                gx[:, :, j : j + length] += np.einsum(
                    "bol,oc->bcl", g, weight.data[:, :, j], optimize=True
                )
            x.accumulate(gx[:, :, pad_l : pad_l + length])

    out = Tensor(out_data)
    if _GRAD_ENABLED and (x.requires_grad or weight.requires_grad or bias.requires_grad):
        out.requires_grad = True
        out._parents = (x, weight, bias)
        out._backward = backward
    return out


def logsumexp(x: Tensor, axis: int) -> Tensor:
    """Numerically stable log(sum(exp(x))) along axis, keepdims dropped."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x - Tensor(m)
    return shifted.exp().sum(axis=axis).log() + Tensor(np.squeeze(m, axis=axis))


def l2_normalize(x: Tensor, axis: int = 1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit Euclidean norm."""
    sq = (x * x).sum(axis=axis, keepdims=True)
    return x * (sq + eps) ** -0.5
