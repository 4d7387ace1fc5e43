"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive the architectures need lives here: broadcasting arithmetic,
batched matmul, 2-D convolution/pooling, neighborhood unfolding, softmax and
the activation family, and batch normalization. Gradients accumulate across
``backward()`` calls; call ``zero_grad`` between optimizer steps.

All data is float64. The artifact targets numerical correctness (tight
finite-difference tolerances), not throughput.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "no_grad",
    "concat",
    "matmul",
    "softmax",
    "log_softmax",
    "relu",
    "sigmoid",
    "swish",
    "gelu",
    "apply_activation",
    "ACTIVATIONS",
    "conv2d",
    "unfold",
    "max_pool2d",
    "avg_pool2d",
    "global_avg_pool",
    "linear",
    "batch_norm",
    "layer_norm",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional float64 array participating in a reverse-mode graph.

    Each non-leaf tensor records the operation that produced it: its parent
    tensors and a closure holding the saved intermediates needed for the
    adjoint rule. ``backward`` visits these records exactly once in reverse
    topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = ""

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._op = op
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ----------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every requires-grad tensor reachable from here.

        Only scalar tensors can seed a backward pass. Grads add across calls.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor._result(self.data + other.data, (self, other), "add")
        if out.requires_grad:

            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g, b.data.shape))

            out._backward_fn = backward
        return out

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor._result(self.data * other.data, (self, other), "mul")
        if out.requires_grad:

            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g * b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g * a.data, b.data.shape))

            out._backward_fn = backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other) * self ** -1.0

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported; use exp/log")
        out = Tensor._result(self.data ** exponent, (self,), "pow")
        if out.requires_grad:

            def backward(g, a=self, p=exponent):
                a._accumulate(g * p * a.data ** (p - 1.0))

            out._backward_fn = backward
        return out

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = Tensor._result(y, (self,), "exp")
        if out.requires_grad:

            def backward(g, a=self, y=y):
                a._accumulate(g * y)

            out._backward_fn = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor._result(np.log(self.data), (self,), "log")
        if out.requires_grad:

            def backward(g, a=self):
                a._accumulate(g / a.data)

            out._backward_fn = backward
        return out

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._result(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:

            def backward(g, a=self):
                a._accumulate(g.reshape(a.data.shape))

            out._backward_fn = backward
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = Tensor._result(np.transpose(self.data, axes), (self,), "transpose")
        if out.requires_grad:
            inverse = tuple(np.argsort(axes))

            def backward(g, a=self, inv=inverse):
                a._accumulate(np.transpose(g, inv))

            out._backward_fn = backward
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor._result(self.data[index], (self,), "getitem")
        if out.requires_grad:

            def backward(g, a=self, idx=index):
                buf = np.zeros_like(a.data)
                np.add.at(buf, idx, g)
                a._accumulate(buf)

            out._backward_fn = backward
        return out

    # -- reductions ----------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:

            def backward(g, a=self, axis=axis, keepdims=keepdims):
                if axis is None:
                    a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                    return
                axes = axis if isinstance(axis, tuple) else (axis,)
                if not keepdims:
                    g = np.expand_dims(g, axes)
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())

            out._backward_fn = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


# -- free functions --------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor._result(data, tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g, ts=tuple(tensors), offs=offsets, axis=axis):
            for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])

        out._backward_fn = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a @ b``; leading dims broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with at least 2 dimensions")
    out = Tensor._result(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:

        def backward(g, a=a, b=b):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        out._backward_fn = backward
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Entries of ``-inf`` receive exactly zero weight, which is how neighborhood
    clipping removes out-of-image positions from local attention.
    """
    if x.data.shape == () or x.data.shape[axis] == 0:
        raise ValueError("softmax axis must be non-empty")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    expd = np.exp(shifted)
    y = expd / expd.sum(axis=axis, keepdims=True)
    out = Tensor._result(y, (x,), "softmax")
    if out.requires_grad:

        def backward(g, a=x, y=y, axis=axis):
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

        out._backward_fn = backward
    return out


def log_softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor._result(y, (x,), "log_softmax")
    if out.requires_grad:

        def backward(g, a=x, y=y, axis=axis):
            a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

        out._backward_fn = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor._result(np.maximum(x.data, 0.0), (x,), "relu")
    if out.requires_grad:

        def backward(g, a=x):
            a._accumulate(g * (a.data > 0.0))

        out._backward_fn = backward
    return out


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    z[~pos] = e / (1.0 + e)
    return z


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_values(x.data)
    out = Tensor._result(y, (x,), "sigmoid")
    if out.requires_grad:

        def backward(g, a=x, y=y):
            a._accumulate(g * y * (1.0 - y))

        out._backward_fn = backward
    return out


def swish(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.data)
    out = Tensor._result(x.data * s, (x,), "swish")
    if out.requires_grad:

        def backward(g, a=x, s=s):
            a._accumulate(g * (s + a.data * s * (1.0 - s)))

        out._backward_fn = backward
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))
    out = Tensor._result(x.data * cdf, (x,), "gelu")
    if out.requires_grad:

        def backward(g, a=x, cdf=cdf):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (cdf + a.data * pdf))

        out._backward_fn = backward
    return out


ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "swish": swish,
    "gelu": gelu,
}


def apply_activation(kind: str, x: Tensor) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


# -- convolution and pooling ---------------------------------------------------


def _pad_spatial(x: np.ndarray, padding: int, fill: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(
        x,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=fill,
    )


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of sliding windows: (N, C, Ho, Wo, kh, kw)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_windows(
    grad_win: np.ndarray,
    x_shape: tuple[int, ...],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
) -> np.ndarray:
    """Adjoint of ``_windows``: scatter-add (N, C, Ho, Wo, kh, kw) into x."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho, wo = grad_win.shape[2], grad_win.shape[3]
    buf = np.zeros((n, c, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                grad_win[:, :, :, :, i, j]
            )
    if padding:
        buf = buf[:, :, padding : padding + h, padding : padding + w]
    return buf


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout.

    ``weight`` is (out_channels, in_channels/groups, kh, kw). Grouped
    convolution covers the depthwise case (groups == in_channels).
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups != 0 or o % groups != 0:
        raise ValueError(f"groups={groups} must divide in={c} and out={o} channels")
    if cg != c // groups:
        raise ValueError(
            f"weight expects {cg} input channels per group, input provides {c // groups}"
        )
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} (pad {padding})")

    xp = _pad_spatial(x.data, padding)
    win = _windows(xp, kh, kw, stride)  # (N, C, Ho, Wo, kh, kw)
    og = o // groups
    k = cg * kh * kw
    # (N, G, Ho*Wo, Cg*kh*kw)
    col = (
        win.reshape(n, groups, cg, ho, wo, kh, kw)
        .transpose(0, 1, 3, 4, 2, 5, 6)
        .reshape(n, groups, ho * wo, k)
    )
    wmat = weight.data.reshape(groups, og, k).transpose(0, 2, 1)  # (G, K, Og)
    out_data = np.matmul(col, wmat)  # (N, G, Ho*Wo, Og)
    out_data = out_data.transpose(0, 1, 3, 2).reshape(n, o, ho, wo)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias must have shape ({o},), got {bias.shape}")
        out_data = out_data + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._result(out_data, parents, "conv2d")
    if out.requires_grad:

        def backward(g, x=x, weight=weight, bias=bias, col=col, wmat=wmat):
            gmat = g.reshape(n, groups, og, ho * wo).transpose(0, 1, 3, 2)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                gw = np.einsum("ngpk,ngpo->gko", col, gmat)  # (G, K, Og)
                weight._accumulate(
                    gw.transpose(0, 2, 1).reshape(o, cg, kh, kw)
                )
            if x.requires_grad:
                gcol = np.matmul(gmat, wmat.transpose(0, 2, 1))  # (N, G, Ho*Wo, K)
                gwin = (
                    gcol.reshape(n, groups, ho, wo, cg, kh, kw)
                    .transpose(0, 1, 4, 2, 3, 5, 6)
                    .reshape(n, c, ho, wo, kh, kw)
                )
                x._accumulate(
                    _scatter_windows(gwin, x.data.shape, kh, kw, stride, padding)
                )

        out._backward_fn = backward
    return out


def unfold(x: Tensor, k: int, padding: int) -> Tensor:
    """Gather k x k neighborhoods of every position: (N, C, k*k, H', W').

    Zero padding; with ``padding = k // 2`` the spatial extent is preserved,
    which is the layout local attention consumes.
    """
    n, c, h, w = x.shape
    xp = _pad_spatial(x.data, padding)
    win = _windows(xp, k, k, 1)  # (N, C, Ho, Wo, k, k)
    ho, wo = win.shape[2], win.shape[3]
    data = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, k * k, ho, wo)
    out = Tensor._result(data, (x,), "unfold")
    if out.requires_grad:

        def backward(g, x=x, k=k, padding=padding, ho=ho, wo=wo):
            gwin = g.reshape(n, c, k, k, ho, wo).transpose(0, 1, 4, 5, 2, 3)
            x._accumulate(_scatter_windows(gwin, x.data.shape, k, k, 1, padding))

        out._backward_fn = backward
    return out


def unfold_validity_mask(h: int, w: int, k: int) -> np.ndarray:
    """(k*k, H, W) indicator of which unfolded neighbors are real pixels."""
    ones = np.ones((1, 1, h, w))
    win = _windows(_pad_spatial(ones, k // 2), k, k, 1)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(k * k, h, w) > 0.5


def max_pool2d(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    if stride is None:
        stride = k
    n, c, h, w = x.shape
    xp = _pad_spatial(x.data, padding, fill=-np.inf)
    win = _windows(xp, k, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = np.argmax(flat, axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = Tensor._result(out_data, (x,), "max_pool2d")
    if out.requires_grad:

        def backward(g, x=x, idx=idx, k=k, stride=stride, padding=padding, ho=ho, wo=wo):
            onehot = np.zeros((n, c, ho, wo, k * k))
            np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
            gwin = (g[..., None] * onehot).reshape(n, c, ho, wo, k, k)
            x._accumulate(_scatter_windows(gwin, x.data.shape, k, k, stride, padding))

        out._backward_fn = backward
    return out


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    if stride is None:
        stride = k
    n, c, h, w = x.shape
    win = _windows(x.data, k, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    out = Tensor._result(win.mean(axis=(4, 5)), (x,), "avg_pool2d")
    if out.requires_grad:

        def backward(g, x=x, k=k, stride=stride, ho=ho, wo=wo):
            gwin = np.broadcast_to(
                g[..., None, None] / (k * k), (n, c, ho, wo, k, k)
            )
            x._accumulate(_scatter_windows(gwin, x.data.shape, k, k, stride, 0))

        out._backward_fn = backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    return x.mean(axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis; ``weight`` is (out_features, in_features)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear: input features {x.shape[-1]} != weight in-features {weight.shape[1]}"
        )
    out = matmul(x, weight.transpose(1, 0))
    if bias is not None:
        out = out + bias
    return out


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over an NCHW tensor.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, like the common convention); eval
    mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // c
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * invstd[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor._result(out_data, (x, gamma, beta), "batch_norm")
    if out.requires_grad:

        def backward(g, x=x, gamma=gamma, beta=beta, xhat=xhat, invstd=invstd, training=training):
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=axes))
            if x.requires_grad:
                scale = (gamma.data * invstd)[None, :, None, None]
                if training:
                    gm = g.mean(axis=axes, keepdims=True)
                    gx = (g * xhat).mean(axis=axes, keepdims=True)
                    x._accumulate(scale * (g - gm - xhat * gx))
                else:
                    x._accumulate(scale * g)

        out._backward_fn = backward
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta
