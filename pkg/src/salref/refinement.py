"""Iterative uncertainty-guided refinement of the saliency prediction.

Three consecutive stages, each of which derives an uncertainty map from
the incoming prediction, runs partitioned masked attention between the
refinement feature (queries) and the projected low-level feature
(keys/values), folds the result through a 1x1 convolution + BatchNorm,
and adds a 1x1 head response to the prediction in logit space. The
prediction is carried as logits between stages (sigmoid only at the
uncertainty and output boundaries) and the incoming logits are clamped
to the equivalent of probabilities in [1e-6, 1-1e-6]; the head starts
zero-initialized, so a stage is an exact identity until it learns a
useful delta.

During training every stage runs at the incoming feature resolution; at
inference the feature and prediction are progressively upsampled between
stages (the attention itself is resolution-agnostic), by default x2, x2,
then to the full input size.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import QKVProjections
from .exceptions import ConfigError, InputError, StateError
from .partition import PartitionConfig, partitioned_attention
from .uncertainty import THRESHOLD, uncertainty_from_prediction

LOGIT_EPS = 1e-6
LOGIT_CAP = math.log((1.0 - LOGIT_EPS) / LOGIT_EPS)
GUIDANCE_MODES = ("uncertainty", "boundary", "none")
DEFAULT_STAGE_FACTORS = (2, 2, "full")


@dataclass
class RefineState:
    feature: torch.Tensor      # [b, width, h, w]
    logits: torch.Tensor       # [b, 1, h, w] prediction logits
    index: int = 0             # completed stages
    scale_applied: float = 1.0

    @property
    def prediction(self):
        return torch.sigmoid(self.logits)

    def check(self):
        if self.feature.shape[2:] != self.logits.shape[2:]:
            raise InputError(
                f"feature {tuple(self.feature.shape[2:])} and prediction "
                f"{tuple(self.logits.shape[2:])} disagree"
            )
        return self


def _resize(x, hw):
    if x.shape[2:] == tuple(hw):
        return x
    return F.interpolate(x, size=tuple(hw), mode="bilinear", align_corners=False)


class RefinementStage(nn.Module):
    def __init__(self, width, heads=1, scale=False, mask_target="key"):
        super().__init__()
        self.projections = QKVProjections(width, width, width)
        self.fold = nn.Conv2d(width, width, kernel_size=1)
        self.norm = nn.BatchNorm2d(width)
        self.head = nn.Conv2d(width, 1, kernel_size=1)
        # identity start: the stage reproduces the incoming prediction until
        # the head learns a useful logit delta
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.heads = heads
        self.scale = scale
        self.mask_target = mask_target

    def forward(self, feature, logits, low_level, guidance_map, cfg):
        refined, cost = partitioned_attention(
            feature, low_level, guidance_map, cfg, self.projections,
            heads=self.heads, scale=self.scale, mask_target=self.mask_target,
        )
        new_feature = self.norm(self.fold(refined))
        new_logits = logits.clamp(-LOGIT_CAP, LOGIT_CAP) + self.head(new_feature)
        return new_feature, new_logits, cost


@dataclass
class RefinerOutput:
    logits: list               # per-stage prediction logits, native stage sizes
    final_logits: torch.Tensor  # last logits after the trailing adjustment
    guidance_maps: list        # what masked each stage (uncertainty unless overridden)
    cost_reports: list

    @property
    def predictions(self):
        return [torch.sigmoid(l) for l in self.logits]

    @property
    def final(self):
        return torch.sigmoid(self.final_logits)


class SaliencyRefiner(nn.Module):
    """Chains three refinement stages with mode-dependent upsampling."""

    def __init__(self, width, low_channels, heads=1, scale=False,
                 mask_target="key", guidance="uncertainty"):
        super().__init__()
        if guidance not in GUIDANCE_MODES:
            raise ConfigError(f"guidance must be one of {GUIDANCE_MODES}")
        self.low_proj = nn.Conv2d(low_channels, width, kernel_size=1)
        self.stages = nn.ModuleList(
            RefinementStage(width, heads=heads, scale=scale, mask_target=mask_target)
            for _ in range(3)
        )
        self.guidance = guidance

    def _guidance_map(self, logits, boundary):
        if self.guidance == "uncertainty":
            return uncertainty_from_prediction(torch.sigmoid(logits))
        if self.guidance == "boundary":
            if boundary is None:
                raise InputError("guidance='boundary' needs an externally supplied map")
            return _resize(boundary, logits.shape[2:]).clamp(0.0, THRESHOLD)
        # "none": attend everywhere, no partitioning
        return torch.full_like(logits, THRESHOLD)

    def run_stage(self, state: RefineState, low_proj, cfg: PartitionConfig,
                  boundary=None):
        if state.index >= len(self.stages):
            raise StateError(f"all {len(self.stages)} refinement stages already run")
        state.check()
        stage = self.stages[state.index]
        hw = state.feature.shape[2:]
        guidance = self._guidance_map(state.logits, boundary)
        if self.guidance == "none":
            cfg = PartitionConfig(p_threshold=0.0, mode="global")
        feature, logits, cost = stage(
            state.feature, state.logits, _resize(low_proj, hw), guidance, cfg
        )
        new_state = RefineState(feature, logits, state.index + 1, state.scale_applied)
        return new_state, guidance, cost

    def forward(self, feature, seed_logits, low_level, cfg: PartitionConfig,
                mode="train", stage_factors=DEFAULT_STAGE_FACTORS,
                full_hw=None, boundary=None):
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
        if mode == "infer" and full_hw is None:
            raise InputError("infer mode needs the full input size")
        low_proj = self.low_proj(low_level)
        state = RefineState(feature, seed_logits)
        logits, guidance_maps, costs = [], [], []
        for j in range(len(self.stages)):
            state, guidance, cost = self.run_stage(state, low_proj, cfg, boundary)
            logits.append(state.logits)
            guidance_maps.append(guidance)
            costs.append(cost)
            if mode == "infer":
                state = self._rescale(state, stage_factors[j], full_hw)
        return RefinerOutput(logits, state.logits, guidance_maps, costs)

    @staticmethod
    def _rescale(state, factor, full_hw):
        h, w = state.feature.shape[2:]
        if factor == "full":
            target = tuple(full_hw)
        else:
            target = (min(int(round(h * factor)), full_hw[0]),
                      min(int(round(w * factor)), full_hw[1]))
        if target == (h, w):
            return state
        return RefineState(
            _resize(state.feature, target),
            _resize(state.logits, target),
            state.index,
            state.scale_applied * target[0] / h,
        )
