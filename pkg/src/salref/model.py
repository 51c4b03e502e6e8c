"""The assembled saliency network.

Encoder pyramid -> cross-level interaction -> coarse-key integration
decoder (three supervised logit heads) -> three uncertainty-guided
refinement stages (three more supervised probability heads). The finest
decoder head seeds the refiner's prediction and its feature map seeds
the refinement feature.
"""

import dataclasses
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BackboneConfig, TinyBackbone
from .integration import SaliencyDecoder
from .interaction import DEFAULT_SCHEME, MultilevelInteraction
from .partition import PartitionConfig
from .refinement import DEFAULT_STAGE_FACTORS, SaliencyRefiner


@dataclass
class ModelOutput:
    decoder_logits: dict                  # level -> [b,1,h,w] logits (3,2,1)
    refined_logits: list                  # stage prediction logits r1..r3
    final_logits: torch.Tensor            # last logits after trailing resize
    guidance_maps: list = field(default_factory=list)
    cost_reports: list = field(default_factory=list)

    @property
    def refined(self):
        return [torch.sigmoid(l) for l in self.refined_logits]

    @property
    def final(self):
        return torch.sigmoid(self.final_logits)

    def heads_at(self, hw):
        """All six supervision heads as probabilities at a common size.

        Logits are resized before the sigmoid so upsampled heads keep
        saturated boundaries.
        """
        heads = {}
        for level, logits in self.decoder_logits.items():
            up = F.interpolate(logits, size=hw, mode="bilinear", align_corners=False)
            heads[f"s{level}"] = torch.sigmoid(up)
        for j, logits in enumerate(self.refined_logits, start=1):
            up = F.interpolate(logits, size=hw, mode="bilinear", align_corners=False)
            heads[f"r{j}"] = torch.sigmoid(up)
        return heads


class SaliencyNet(nn.Module):
    def __init__(self, backbone_cfg: BackboneConfig = None, width=64,
                 scheme=DEFAULT_SCHEME, heads=1, attn_scale=False,
                 channel_reduction=4, mask_target="key", guidance="uncertainty"):
        super().__init__()
        self.backbone = TinyBackbone(backbone_cfg)
        channels = self.backbone.cfg.stage_channels
        self.interaction = MultilevelInteraction(
            channels, width=width, scheme=scheme, reduction=channel_reduction,
            heads=heads, scale=attn_scale,
        )
        self.decoder = SaliencyDecoder(width=width, heads=heads, scale=attn_scale)
        self.refiner = SaliencyRefiner(
            width, low_channels=channels[0], heads=heads, scale=attn_scale,
            mask_target=mask_target, guidance=guidance,
        )
        self.width = width

    def backbone_parameters(self):
        return self.backbone.parameters()

    def decoder_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("backbone."):
                yield p

    def forward(self, image, mode="train", partition_cfg: PartitionConfig = None,
                stage_factors=DEFAULT_STAGE_FACTORS, boundary=None):
        cfg = partition_cfg or PartitionConfig()
        if cfg.min_size == 0:
            # minimum window scales with the network input, not the stage map
            cfg = dataclasses.replace(cfg, min_size=max(image.shape[2] // 32, 1))
        pyramid = self.backbone(image)
        interacted = self.interaction(pyramid)
        state = self.decoder(interacted)
        refined = self.refiner(
            state.integrated[1], state.logits[1], pyramid[0], cfg, mode=mode,
            stage_factors=stage_factors, full_hw=tuple(image.shape[2:]),
            boundary=boundary,
        )
        return ModelOutput(
            decoder_logits=state.logits,
            refined_logits=refined.logits,
            final_logits=refined.final_logits,
            guidance_maps=refined.guidance_maps,
            cost_reports=refined.cost_reports,
        )
