"""Cross-level interaction attention over the backbone pyramid.

Each of levels 1..4 is first channel-attended and projected to the common
decoder width; a level with a configured partner then queries the
partner's raw feature map with cross attention and folds the result back
through a 1x1 convolution and BatchNorm. Levels without a partner keep
the channel-attended projection only. Level 0 is not touched here; it is
consumed later as the low-level refinement reference.

The partner wiring is data, not code: the scheme string "2\\3\\4\\-"
assigns partners to levels 1..4 in order, "-" meaning none.
"""

from dataclasses import dataclass, field

import torch.nn as nn

from .attention import ChannelAttention, QKVProjections, attention, from_tokens, to_tokens
from .exceptions import ConfigError


@dataclass
class InteractionScheme:
    partners: dict  # level (1..4) -> partner level (1..4) or None

    @classmethod
    def parse(cls, text):
        parts = [p.strip() for p in text.split("\\")]
        if len(parts) != 4:
            raise ConfigError(f"scheme needs 4 fields separated by '\\', got {text!r}")
        partners = {}
        for level, part in zip(range(1, 5), parts):
            if part == "-":
                partners[level] = None
                continue
            try:
                partner = int(part)
            except ValueError:
                raise ConfigError(f"bad partner {part!r} in scheme {text!r}") from None
            if not 1 <= partner <= 4:
                raise ConfigError(f"partner level {partner} out of range 1..4")
            partners[level] = partner
        return cls(partners)

    def __str__(self):
        return "\\".join(
            "-" if self.partners[i] is None else str(self.partners[i]) for i in range(1, 5)
        )


DEFAULT_SCHEME = "2\\3\\4\\-"


@dataclass
class MiaOutput:
    interacted: list = field(default_factory=list)  # levels 1..4 at common width

    def __getitem__(self, i):
        return self.interacted[i]


class MultilevelInteraction(nn.Module):
    """Channel attention + partner cross-attention for pyramid levels 1..4."""

    def __init__(self, stage_channels, width=64, scheme=DEFAULT_SCHEME,
                 reduction=4, heads=1, scale=False):
        super().__init__()
        if isinstance(scheme, str):
            scheme = InteractionScheme.parse(scheme)
        self.scheme = scheme
        self.width = width
        self.heads = heads
        self.scale = scale
        self.channel_attn = nn.ModuleDict()
        self.projections = nn.ModuleDict()
        self.fold = nn.ModuleDict()
        self.norm = nn.ModuleDict()
        for level in range(1, 5):
            key = str(level)
            self.channel_attn[key] = ChannelAttention(
                stage_channels[level], out_channels=width, reduction=reduction
            )
            partner = scheme.partners[level]
            if partner is not None:
                self.projections[key] = QKVProjections(
                    width, stage_channels[partner], width
                )
                self.fold[key] = nn.Conv2d(width, width, kernel_size=1)
                self.norm[key] = nn.BatchNorm2d(width)

    def forward(self, pyramid):
        if len(pyramid) != 5:
            raise ConfigError(f"expected a 5-level pyramid, got {len(pyramid)}")
        out = []
        for level in range(1, 5):
            key = str(level)
            attended = self.channel_attn[key](pyramid[level])
            partner = self.scheme.partners[level]
            if partner is None:
                out.append(attended)
                continue
            raw = pyramid[partner]
            h, w = attended.shape[2:]
            q, k, v = self.projections[key](to_tokens(attended), to_tokens(raw))
            cross = attention(q, k, v, scale=self.scale, heads=self.heads)
            fused = attended + from_tokens(cross, h, w)
            out.append(self.norm[key](self.fold[key](fused)))
        return MiaOutput(interacted=out)
