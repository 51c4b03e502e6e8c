"""Tiny hierarchical encoder producing a five-level feature pyramid.

Stands in for the large pretrained encoders this decoder family usually
rides on: a strided stem followed by four strided residual stages, small
enough to finite-difference. Level 0 is the stem output (highest
resolution, stride 2 by default) and is consumed later as the low-level
reference for refinement.
"""

from dataclasses import dataclass, field

import torch.nn as nn

from .exceptions import ConfigError, InputError


@dataclass
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple = (16, 24, 32, 48, 64)
    strides: tuple = (2, 4, 8, 16, 32)
    blocks_per_stage: int = 1

    def validate(self):
        if len(self.stage_channels) != 5 or len(self.strides) != 5:
            raise ConfigError("backbone needs exactly 5 stages")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage channels must be >= 1, got {self.stage_channels}")
        for a, b in zip(self.strides, self.strides[1:]):
            if b <= a:
                raise ConfigError(f"strides must be strictly increasing, got {self.strides}")
            if b % a != 0:
                raise ConfigError(f"stride {a} does not divide {b}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        return self


@dataclass
class FeaturePyramid:
    """The five multilevel maps; level i has spatial size input/strides[i]."""

    levels: list = field(default_factory=list)

    def __getitem__(self, i):
        return self.levels[i]

    def __len__(self):
        return len(self.levels)

    def validate(self, cfg: BackboneConfig, input_hw=None):
        if len(self.levels) != 5:
            raise InputError(f"expected 5 levels, got {len(self.levels)}")
        batch = self.levels[0].shape[0]
        for i, t in enumerate(self.levels):
            if t.shape[0] != batch:
                raise InputError(f"level {i} batch {t.shape[0]} != {batch}")
            if t.shape[1] != cfg.stage_channels[i]:
                raise InputError(f"level {i} channels {t.shape[1]} != {cfg.stage_channels[i]}")
            if input_hw is not None:
                h, w = input_hw
                want = (h // cfg.strides[i], w // cfg.strides[i])
                if tuple(t.shape[2:]) != want:
                    raise InputError(f"level {i} spatial {tuple(t.shape[2:])} != {want}")
        return self


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.bn2(self.conv2(self.act(self.bn1(self.conv1(x)))))
        return self.act(out + x)


def _down(in_c, out_c, factor):
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, 3, stride=factor, padding=1, bias=False),
        nn.BatchNorm2d(out_c),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Five-stage encoder; ``forward`` returns a :class:`FeaturePyramid`."""

    def __init__(self, cfg: BackboneConfig = None):
        super().__init__()
        self.cfg = (cfg or BackboneConfig()).validate()
        c = self.cfg.stage_channels
        s = self.cfg.strides
        stages = []
        in_c, in_stride = self.cfg.in_channels, 1
        for i in range(5):
            layers = [_down(in_c, c[i], s[i] // in_stride)]
            layers += [ResidualBlock(c[i]) for _ in range(self.cfg.blocks_per_stage)]
            stages.append(nn.Sequential(*layers))
            in_c, in_stride = c[i], s[i]
        self.stages = nn.ModuleList(stages)

    def forward(self, image):
        if image.dim() != 4 or image.shape[1] != self.cfg.in_channels:
            raise InputError(
                f"expected [b, {self.cfg.in_channels}, h, w] input, got {tuple(image.shape)}"
            )
        full = self.cfg.strides[-1]
        for name, dim in (("height", image.shape[2]), ("width", image.shape[3])):
            if dim % full != 0:
                raise InputError(f"input {name} {dim} not divisible by max stride {full}")
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels)


def extract(image, backbone: TinyBackbone):
    """Functional alias: run the encoder and return its pyramid."""
    return backbone(image)
