"""Top-down aggregation and coarse-key attention with per-level heads.

Levels 3..1 are aggregated FPN-style: each level concatenates its
interacted feature with the x2-upsampled output of the level above and
is squeezed back to the decoder width by a 1x1 convolution. The
attention block then draws keys/values from an r x r, stride-r
convolution of the aggregated map with r = 2^(3-i), so every level
integrates saliency at the same coarse grid as level 3, while queries
keep full resolution. Each block ends with a 1x1 head emitting saliency
logits for deep supervision.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import QKVProjections, attention, from_tokens, to_tokens
from .exceptions import InputError


def upsample2x(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


@dataclass
class DecoderState:
    aggregated: dict = field(default_factory=dict)   # level -> aggregated map
    integrated: dict = field(default_factory=dict)   # level -> attended map
    logits: dict = field(default_factory=dict)       # level -> [b,1,h,w] logits


class CoarseAttentionBlock(nn.Module):
    """Self-attention with spatially reduced keys/values plus an MLP tail."""

    def __init__(self, width, reduction_ratio, heads=1, scale=False):
        super().__init__()
        self.r = reduction_ratio
        self.heads = heads
        self.scale = scale
        self.reduce = nn.Conv2d(width, width, kernel_size=reduction_ratio,
                                stride=reduction_ratio)
        self.reduce_norm = nn.BatchNorm2d(width)
        self.projections = QKVProjections(width, width, width)
        self.mlp = nn.Sequential(
            nn.Conv2d(width, width, kernel_size=1),
            nn.GELU(),
            nn.Conv2d(width, width, kernel_size=1),
        )
        self.fold = nn.Conv2d(width, width, kernel_size=1)
        self.norm = nn.BatchNorm2d(width)
        self.head = nn.Conv2d(width, 1, kernel_size=1)

    def forward(self, x):
        b, c, h, w = x.shape
        if h % self.r or w % self.r:
            raise InputError(
                f"spatial size {h}x{w} not divisible by reduction ratio {self.r}"
            )
        reduced = self.reduce_norm(self.reduce(x))
        q, k, v = self.projections(to_tokens(x), to_tokens(reduced))
        attended = x + from_tokens(attention(q, k, v, scale=self.scale, heads=self.heads), h, w)
        integrated = self.norm(self.fold(attended + self.mlp(attended)))
        return integrated, self.head(integrated)


class SaliencyDecoder(nn.Module):
    """Aggregates interacted levels 1..4 and emits logits for levels 3..1."""

    def __init__(self, width=64, heads=1, scale=False):
        super().__init__()
        self.squeeze = nn.ModuleDict({
            str(level): nn.Conv2d(2 * width, width, kernel_size=1) for level in (1, 2, 3)
        })
        self.blocks = nn.ModuleDict({
            str(level): CoarseAttentionBlock(width, 2 ** (3 - level), heads=heads, scale=scale)
            for level in (1, 2, 3)
        })

    def forward(self, mia_out):
        state = DecoderState()
        above = mia_out[3]  # level 4 joins level 3's aggregation directly
        for level in (3, 2, 1):
            current = mia_out[level - 1]
            agg = self.squeeze[str(level)](torch.cat([current, upsample2x(above)], dim=1))
            state.aggregated[level] = agg
            integrated, logits = self.blocks[str(level)](agg)
            state.integrated[level] = integrated
            state.logits[level] = logits
            above = integrated
        return state
