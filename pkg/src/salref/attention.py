"""Attention primitives shared by every decoder stage.

Three building blocks: plain token attention, additive-mask attention
(mask entries are 0 or -inf), and channel gating driven by globally
pooled statistics. All of them are pure functions of their inputs and
parameters, so concurrent inference is safe.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import InputError

NEG_INF = float("-inf")


def _check_qkv(q, k, v):
    if q.dim() != 3 or k.dim() != 3 or v.dim() != 3:
        raise InputError(
            f"expected [batch, tokens, channels] tensors, got dims "
            f"{q.dim()}/{k.dim()}/{v.dim()}"
        )
    if k.shape[1] != v.shape[1]:
        raise InputError(f"key/value token counts differ: {k.shape[1]} vs {v.shape[1]}")
    if not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise InputError(f"batch sizes differ: {q.shape[0]}/{k.shape[0]}/{v.shape[0]}")
    if not (q.shape[2] == k.shape[2] == v.shape[2]):
        raise InputError(f"channel widths differ: {q.shape[2]}/{k.shape[2]}/{v.shape[2]}")


def _split_heads(x, heads):
    b, n, c = x.shape
    if c % heads != 0:
        raise InputError(f"width {c} not divisible by {heads} heads")
    return x.reshape(b, n, heads, c // heads).transpose(1, 2).reshape(b * heads, n, c // heads)


def _merge_heads(x, heads):
    bh, n, d = x.shape
    b = bh // heads
    return x.reshape(b, heads, n, d).transpose(1, 2).reshape(b, n, heads * d)


def attention(q, k, v, scale=False, heads=1):
    """Softmax(QK^T)V over token rows.

    Logits are unscaled by default; ``scale=True`` applies the usual
    1/sqrt(head_dim) factor. Each output row is a convex combination of
    value rows.
    """
    _check_qkv(q, k, v)
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    logits = q @ k.transpose(1, 2)
    if scale:
        logits = logits / math.sqrt(q.shape[-1])
    out = torch.softmax(logits, dim=-1) @ v
    if heads > 1:
        out = _merge_heads(out, heads)
    return out


def mask_attention(mask, q, k, v, scale=False, heads=1):
    """Softmax(M + QK^T)V with an additive {0, -inf} mask.

    Keys carrying -inf receive exactly zero weight. Query rows whose keys
    are all masked produce a zero output vector instead of NaN, so a
    residual connection passes the query feature through unchanged.
    """
    _check_qkv(q, k, v)
    if mask.shape != (q.shape[0], q.shape[1], k.shape[1]):
        raise InputError(
            f"mask shape {tuple(mask.shape)} does not match "
            f"[{q.shape[0]}, {q.shape[1]}, {k.shape[1]}]"
        )
    dead = torch.isinf(mask).all(dim=-1, keepdim=True)  # fully-masked query rows
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
        mask = mask.repeat_interleave(heads, dim=0)
    logits = q @ k.transpose(1, 2)
    if scale:
        logits = logits / math.sqrt(q.shape[-1])
    logits = logits + mask
    # Rows that are entirely -inf would softmax to NaN; neutralise them
    # here and zero the result below.
    logits = torch.where(torch.isinf(logits).all(dim=-1, keepdim=True), torch.zeros_like(logits), logits)
    out = torch.softmax(logits, dim=-1) @ v
    if heads > 1:
        out = _merge_heads(out, heads)
    return out.masked_fill(dead, 0.0)


def validate_mask(mask):
    """Assert a mask holds only the 0 / -inf sentinels (test helper)."""
    finite = mask[torch.isfinite(mask)]
    if finite.numel() and not (finite == 0).all():
        raise InputError("mask contains finite entries other than 0")
    if torch.isinf(mask).any() and not (mask[torch.isinf(mask)] == NEG_INF).all():
        raise InputError("mask contains +inf")


class QKVProjections(nn.Module):
    """Per-token linear maps producing queries, keys and values.

    Queries come from a ``q_channels``-wide stream, keys/values from a
    possibly different ``kv_channels`` stream; all three land at ``width``.
    """

    def __init__(self, q_channels, kv_channels, width):
        super().__init__()
        self.q_proj = nn.Linear(q_channels, width)
        self.k_proj = nn.Linear(kv_channels, width)
        self.v_proj = nn.Linear(kv_channels, width)

    def forward(self, q_tokens, kv_tokens):
        return self.q_proj(q_tokens), self.k_proj(kv_tokens), self.v_proj(kv_tokens)


class ChannelAttention(nn.Module):
    """Channel gating from global average pooling, then a 1x1 projection.

    The gate is GAP -> linear -> GeLU -> linear (a bottleneck, no squashing
    nonlinearity on the output), multiplied onto the feature map; the final
    1x1 convolution can change the channel count.
    """

    def __init__(self, in_channels, out_channels=None, reduction=4):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        hidden = max(in_channels // reduction, 1)
        self.gate_in = nn.Linear(in_channels, hidden)
        self.gate_out = nn.Linear(hidden, in_channels)
        self.proj = nn.Conv2d(in_channels, out_channels, kernel_size=1)

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        gate = self.gate_out(F.gelu(self.gate_in(pooled)))
        return self.proj(x * gate[:, :, None, None])


def to_tokens(x):
    """[b, c, h, w] -> [b, h*w, c], row-major over (h, w)."""
    return x.flatten(2).transpose(1, 2)


def from_tokens(tokens, h, w):
    """Inverse of :func:`to_tokens`."""
    b, n, c = tokens.shape
    if n != h * w:
        raise InputError(f"token count {n} does not match {h}x{w}")
    return tokens.transpose(1, 2).reshape(b, c, h, w)
