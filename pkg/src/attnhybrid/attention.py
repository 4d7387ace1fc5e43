"""Self-attention blocks for hybridizing convolutional networks.

Three block families plus the transformer baseline layer:

* ``GlobalAttention`` (GA) — every position attends to every other position
  of the feature map; a zero-initialized output projection plus residual
  makes insertion an exact identity at initialization.
* ``LocalAttention`` (LA) — attention restricted to the k x k neighborhood
  around each pixel with learnable relative-position terms; it substitutes a
  convolution outright, so the replaced network's behavior is not preserved.
* ``EmbeddedLocalAttention`` (ELA) — LA on a residual side branch (behind a
  zero-initialized 1x1 projection) around the retained convolution, keeping
  the wrapped layer's behavior at initialization.
* ``MultiHeadSelfAttention`` (MHSA) — standard scaled dot-product attention
  over token sequences.

Every block stashes its most recent attention distribution (plain arrays,
detached from the graph) in ``last_attention`` for visualization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Linear, Module, Parameter
from .tensor import (
    Tensor,
    avg_pool2d,
    matmul,
    softmax,
    unfold,
    unfold_validity_mask,
)

__all__ = [
    "AttentionConfig",
    "GlobalAttention",
    "LocalAttention",
    "EmbeddedLocalAttention",
    "MultiHeadSelfAttention",
    "ga_forward",
    "la_forward",
    "ela_forward",
    "mhsa_forward",
]

_KINDS = ("GA", "LA", "ELA", "MHSA")
_INIT_MODES = ("zero", "random")


@dataclass
class AttentionConfig:
    """Free parameters of the attention blocks.

    ``k`` is the neighborhood size of LA/ELA (odd so the window is symmetric
    around its center), ``heads`` the head count, ``channel_reduction`` the
    GA bottleneck divisor, ``rel_pos`` toggles LA's relative-position terms,
    and ``out_proj_init`` selects zero (identity-preserving) or random
    initialization for the GA_w/LA_w output projections.
    """

    kind: str
    k: int = 7
    heads: int = 4
    channel_reduction: int = 2
    rel_pos: bool = True
    out_proj_init: str = "zero"

    def validate(self) -> "AttentionConfig":
        if self.kind not in _KINDS:
            raise ValueError(f"unknown attention kind {self.kind!r}; expected one of {_KINDS}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"neighborhood size k must be odd and >= 1, got {self.k}")
        if self.heads < 1:
            raise ValueError(f"heads must be positive, got {self.heads}")
        if self.channel_reduction < 1:
            raise ValueError(
                f"channel_reduction must be positive, got {self.channel_reduction}"
            )
        if self.out_proj_init not in _INIT_MODES:
            raise ValueError(
                f"out_proj_init must be one of {_INIT_MODES}, got {self.out_proj_init!r}"
            )
        return self


class GlobalAttention(Module):
    """Global self-attention block with residual and zero-initializable output.

    Each output position is a softmax-weighted sum over value projections of
    ALL positions, mixed back to the input width by a 1x1 projection and added
    to the input. With the output projection zero-initialized the block is an
    exact identity, so it can be inserted into a trained network without
    changing its function.
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        channel_reduction: int = 2,
        out_proj_init: str = "zero",
    ):
        super().__init__()
        if channels % channel_reduction != 0:
            raise ValueError(
                f"channel_reduction={channel_reduction} must divide channels={channels}"
            )
        if out_proj_init not in _INIT_MODES:
            raise ValueError(f"out_proj_init must be one of {_INIT_MODES}")
        self.channels = channels
        reduced = channels // channel_reduction
        self.reduced = reduced
        self.query = Conv2d(channels, reduced, 1, rng, bias=True)
        self.key = Conv2d(channels, reduced, 1, rng, bias=True)
        self.value = Conv2d(channels, reduced, 1, rng, bias=True)
        self.out_proj = Conv2d(
            reduced, channels, 1, rng, bias=True, zero_init=(out_proj_init == "zero")
        )
        self.last_attention: np.ndarray | None = None
        self.last_spatial: tuple[int, int] | None = None

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        p = h * w
        q = self.query(x).reshape(n, self.reduced, p)
        k = self.key(x).reshape(n, self.reduced, p)
        v = self.value(x).reshape(n, self.reduced, p)
        logits = matmul(q.transpose(0, 2, 1), k)  # (N, P, P), rows are queries
        attn = softmax(logits, axis=2)
        self.last_attention = attn.data.copy()
        self.last_spatial = (h, w)
        ctx = matmul(attn, v.transpose(0, 2, 1))  # (N, P, reduced)
        ctx = ctx.transpose(0, 2, 1).reshape(n, self.reduced, h, w)
        return self.out_proj(ctx) + x


class LocalAttention(Module):
    """Pixel-neighborhood self-attention that substitutes a convolution.

    For each position (i, j) the output is the softmax-weighted sum of value
    vectors over the positions (a, b) with |a-i| < k/2 and |b-j| < k/2,
    clipped at the image border so softmax mass stays on real pixels. Logits
    are q(i,j)·(k(a,b) + rel(a-i, b-j)) per head; the relative-position table
    is shared across heads along the per-head feature split. Strided layers
    are substituted by appending 2x2 average pooling (``pool_stride=2``).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        k: int = 7,
        heads: int = 4,
        rel_pos: bool = True,
        pool_stride: int = 1,
    ):
        super().__init__()
        if k < 1 or k % 2 == 0:
            raise ValueError(f"neighborhood size k must be odd and >= 1, got {k}")
        if heads < 1 or out_channels % heads != 0:
            raise ValueError(
                f"heads={heads} must be positive and divide out_channels={out_channels}"
            )
        if pool_stride < 1:
            raise ValueError(f"pool_stride must be >= 1, got {pool_stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = k
        self.heads = heads
        self.head_dim = out_channels // heads
        self.pool_stride = pool_stride
        self.query = Conv2d(in_channels, out_channels, 1, rng, bias=False)
        self.key = Conv2d(in_channels, out_channels, 1, rng, bias=False)
        self.value = Conv2d(in_channels, out_channels, 1, rng, bias=False)
        if rel_pos:
            self.rel_pos = Parameter(rng.normal(0.0, 0.02, (self.head_dim, k, k)))
        else:
            self.rel_pos = None
        self.last_attention: np.ndarray | None = None
        self._mask_cache: dict[tuple[int, int], np.ndarray] = {}

    def _clip_mask(self, h: int, w: int) -> np.ndarray:
        """Additive logit mask: 0 on real neighbors, -inf on padding."""
        key = (h, w)
        if key not in self._mask_cache:
            valid = unfold_validity_mask(h, w, self.k)
            self._mask_cache[key] = np.where(valid, 0.0, -np.inf)
        return self._mask_cache[key]

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        k, heads, dh = self.k, self.heads, self.head_dim
        kk = k * k
        q = self.query(x).reshape(n, heads, dh, 1, h, w)
        keys = unfold(self.key(x), k, k // 2).reshape(n, heads, dh, kk, h, w)
        vals = unfold(self.value(x), k, k // 2).reshape(n, heads, dh, kk, h, w)
        if self.rel_pos is not None:
            keys = keys + self.rel_pos.reshape(1, 1, dh, kk, 1, 1)
        logits = (q * keys).sum(axis=2)  # (N, heads, kk, H, W)
        logits = logits + Tensor(self._clip_mask(h, w).reshape(1, 1, kk, h, w))
        attn = softmax(logits, axis=2)
        self.last_attention = attn.data.copy()
        out = (attn.reshape(n, heads, 1, kk, h, w) * vals).sum(axis=3)
        out = out.reshape(n, self.out_channels, h, w)
        if self.pool_stride > 1:
            out = avg_pool2d(out, self.pool_stride, self.pool_stride)
        return out


class EmbeddedLocalAttention(Module):
    """Local attention embedded beside a retained layer via a residual branch.

    ``output = out_proj(la(x)) + wrapped(x)``; with the 1x1 output projection
    zero-initialized this equals the wrapped layer exactly, so pre-trained
    behavior survives the insertion.
    """

    def __init__(
        self,
        wrapped: Module,
        la: LocalAttention,
        rng: np.random.Generator,
        out_proj_init: str = "zero",
    ):
        super().__init__()
        wrapped_out = getattr(wrapped, "out_channels", None)
        if wrapped_out is not None and wrapped_out != la.out_channels:
            raise ValueError(
                f"attention branch emits {la.out_channels} channels but the wrapped "
                f"layer emits {wrapped_out}"
            )
        self.wrapped = wrapped
        self.la = la
        self.out_channels = la.out_channels
        self.out_proj = Conv2d(
            la.out_channels, la.out_channels, 1, rng,
            bias=True, zero_init=(out_proj_init == "zero"),
        )

    def forward(self, x: Tensor) -> Tensor:
        return ela_forward(x, self.wrapped, self)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over token sequences (N, T, D)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or dim % heads != 0:
            raise ValueError(f"heads={heads} must be positive and divide dim={dim}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.qkv = Linear(dim, 3 * dim, rng, bias=True)
        self.proj = Linear(dim, dim, rng, bias=True)
        self.last_attention: np.ndarray | None = None

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3:
            raise ValueError(f"tokens must be (N, T, D), got shape {tokens.shape}")
        n, t, d = tokens.shape
        if d != self.dim:
            raise ValueError(f"expected token dim {self.dim}, got {d}")
        qkv = self.qkv(tokens).reshape(n, t, 3, self.heads, self.head_dim)
        qkv = qkv.transpose(2, 0, 3, 1, 4)  # (3, N, heads, T, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = matmul(q, k.transpose(0, 1, 3, 2)) * self.scale
        attn = softmax(logits, axis=3)
        self.last_attention = attn.data.copy()
        ctx = matmul(attn, v)  # (N, heads, T, dh)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(n, t, d)
        return self.proj(ctx)


# -- functional entry points ------------------------------------------------


def ga_forward(x: Tensor, params: GlobalAttention) -> Tensor:
    """Apply a global attention block (parameter store = the block)."""
    return params(x)


def la_forward(
    x: Tensor, params: LocalAttention, k: int | None = None, heads: int | None = None
) -> Tensor:
    """Apply local attention; optional k/heads are validated against the store."""
    if k is not None and k != params.k:
        raise ValueError(f"k={k} does not match the parameter store's k={params.k}")
    if heads is not None and heads != params.heads:
        raise ValueError(
            f"heads={heads} does not match the parameter store's heads={params.heads}"
        )
    return params(x)


def ela_forward(
    x: Tensor,
    wrapped_conv: Module,
    la_params,
    k: int | None = None,
    heads: int | None = None,
) -> Tensor:
    """Embedded local attention: out_proj(la(x)) + wrapped_conv(x).

    ``la_params`` is either an ``EmbeddedLocalAttention`` store or a
    ``(LocalAttention, out_proj)`` pair.
    """
    if isinstance(la_params, EmbeddedLocalAttention):
        la, proj = la_params.la, la_params.out_proj
    else:
        la, proj = la_params
    if k is not None and k != la.k:
        raise ValueError(f"k={k} does not match the parameter store's k={la.k}")
    if heads is not None and heads != la.heads:
        raise ValueError(
            f"heads={heads} does not match the parameter store's heads={la.heads}"
        )
    return proj(la(x)) + wrapped_conv(x)


def mhsa_forward(
    tokens: Tensor, params: MultiHeadSelfAttention, heads: int | None = None
) -> Tensor:
    """Apply multi-head self-attention to a token sequence."""
    if heads is not None and heads != params.heads:
        raise ValueError(
            f"heads={heads} does not match the parameter store's heads={params.heads}"
        )
    return params(tokens)
