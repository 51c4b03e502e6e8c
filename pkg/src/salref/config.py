"""Flat dotted-key experiment configuration.

One ``key = value`` pair per line, ``#`` comments, unknown keys
rejected. Every key has a typed schema entry with a default, so a config
file only lists deviations; serialization emits the full sorted table,
which makes configs diffable and gives a stable hash. The architecture
hash covers only the keys a checkpoint's weights depend on, so inference
may legitimately vary runtime knobs (partitioning, stage factors).
"""

import hashlib
from dataclasses import dataclass

from .backbone import BackboneConfig
from .data import AugmentConfig
from .exceptions import ConfigError
from .interaction import DEFAULT_SCHEME
from .partition import MODES, PartitionConfig


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_ints(text):
    return tuple(int(p) for p in text.split(","))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class KeySpec:
    default: object
    parse: callable
    check: callable = None
    help: str = ""


def _choice(*options):
    def check(v):
        if v not in options:
            raise ConfigError(f"must be one of {options}, got {v!r}")
    return check


def _positive(v):
    if v <= 0:
        raise ConfigError(f"must be positive, got {v}")


def _non_negative(v):
    if v < 0:
        raise ConfigError(f"must be >= 0, got {v}")


def _unit_interval(v):
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"must be in [0,1], got {v}")


def _lr_mult(v):
    if not 0.0 < v <= 1.0:
        raise ConfigError(f"must be in (0,1], got {v}")


def _stage_factors_ok(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"stage factors need 3 entries, got {text!r}")
    for p in parts:
        if p.strip() == "full":
            continue
        if float(p) <= 0:
            raise ConfigError(f"stage factor must be positive or 'full': {p!r}")


SCHEMA = {
    "seed": KeySpec(0, int, _non_negative, "global RNG seed"),
    "resolution": KeySpec(64, int, _positive, "square training resolution"),
    "backbone.in_channels": KeySpec(3, int, _positive),
    "backbone.stage_channels": KeySpec((16, 24, 32, 48, 64), _parse_ints),
    "backbone.strides": KeySpec((2, 4, 8, 16, 32), _parse_ints),
    "backbone.blocks_per_stage": KeySpec(1, int, _positive),
    "model.width": KeySpec(64, int, _positive, "common decoder width"),
    "model.heads": KeySpec(1, int, _positive, "attention head count"),
    "model.attn_scale": KeySpec(False, _parse_bool, help="1/sqrt(d) logit scaling"),
    "model.channel_reduction": KeySpec(4, int, _positive),
    "model.mask_target": KeySpec("key", str, _choice("key", "query")),
    "model.guidance": KeySpec("uncertainty", str,
                              _choice("uncertainty", "boundary", "none")),
    "interaction.scheme": KeySpec(DEFAULT_SCHEME, str, help="partner per level, e.g. 2\\3\\4\\-"),
    "refine.stage_factors": KeySpec("2,2,full", str, _stage_factors_ok),
    "partition.mode": KeySpec("adp", str, _choice(*MODES)),
    "partition.p_threshold": KeySpec(0.2, float, _unit_interval),
    "partition.min_size": KeySpec(0, int, _non_negative, "0 derives input/32"),
    "partition.normalize_by_window": KeySpec(False, _parse_bool),
    "partition.seed": KeySpec(0, int, _non_negative),
    "loss.variant": KeySpec("bce+iou+sc", str,
                            _choice("bce", "bce+iou", "bce+iou+sc", "wbce+wiou", "api")),
    "loss.reduction": KeySpec("mean", str, _choice("mean", "sum")),
    "train.batch_size": KeySpec(4, int, _positive),
    "train.epochs": KeySpec(60, int, _positive),
    "train.steps": KeySpec(0, int, _non_negative, "0 derives epochs * steps/epoch"),
    "train.lr": KeySpec(1e-4, float, _positive),
    "train.backbone_lr_mult": KeySpec(0.1, float, _lr_mult),
    "train.poly_power": KeySpec(0.9, float, _positive),
    "train.warmup": KeySpec(-1, int, None, "-1 derives 5% of total steps"),
    "train.grad_clip": KeySpec(0.0, float, _non_negative, "0 disables clipping"),
    "train.eval_every": KeySpec(100, int, _positive),
    "train.run_dir": KeySpec("runs/default", str),
    "data.train_manifest": KeySpec("", str),
    "data.val_manifest": KeySpec("", str),
    "data.synth.enable": KeySpec(False, _parse_bool),
    "data.synth.count": KeySpec(16, int, _positive),
    "data.synth.noise": KeySpec(0.05, float, _non_negative),
    "data.synth.min_shapes": KeySpec(1, int, _positive),
    "data.synth.max_shapes": KeySpec(3, int, _positive),
    "augment.enable": KeySpec(True, _parse_bool),
    "augment.rotate": KeySpec(15.0, float, _non_negative),
    "augment.crop_scale": KeySpec(0.75, float, _unit_interval),
    "augment.photometric": KeySpec(0.2, float, _non_negative),
}

ARCH_KEYS = (
    "resolution", "backbone.in_channels", "backbone.stage_channels",
    "backbone.strides", "backbone.blocks_per_stage", "model.width",
    "model.heads", "model.attn_scale", "model.channel_reduction",
    "model.mask_target", "model.guidance", "interaction.scheme",
)


class ExperimentConfig:
    def __init__(self, values=None):
        self.values = {k: spec.default for k, spec in SCHEMA.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        spec = SCHEMA[key]
        if isinstance(value, str) and not isinstance(spec.default, str):
            value = spec.parse(value)
        if spec.check:
            spec.check(value)
        self.values[key] = value
        return self

    def get(self, key):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    @classmethod
    def parse_text(cls, text, source="<config>"):
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse_text(fh.read(), source=str(path))

    def to_text(self):
        return "\n".join(f"{k} = {_fmt(self.values[k])}" for k in sorted(SCHEMA)) + "\n"

    def hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def arch_hash(self):
        text = "\n".join(f"{k} = {_fmt(self.values[k])}" for k in ARCH_KEYS)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    # ---- typed views -------------------------------------------------

    def backbone_config(self):
        return BackboneConfig(
            in_channels=self.get("backbone.in_channels"),
            stage_channels=self.get("backbone.stage_channels"),
            strides=self.get("backbone.strides"),
            blocks_per_stage=self.get("backbone.blocks_per_stage"),
        ).validate()

    def partition_config(self):
        return PartitionConfig(
            p_threshold=self.get("partition.p_threshold"),
            min_size=self.get("partition.min_size"),
            mode=self.get("partition.mode"),
            normalize_by_window=self.get("partition.normalize_by_window"),
            seed=self.get("partition.seed"),
        ).validate()

    def augment_config(self):
        return AugmentConfig(
            enable=self.get("augment.enable"),
            rotate_deg=self.get("augment.rotate"),
            crop_scale=self.get("augment.crop_scale"),
            photometric=self.get("augment.photometric"),
        )

    def stage_factors(self):
        parts = self.get("refine.stage_factors").split(",")
        return tuple("full" if p.strip() == "full" else float(p) for p in parts)

    def build_model(self):
        from .model import SaliencyNet
        return SaliencyNet(
            backbone_cfg=self.backbone_config(),
            width=self.get("model.width"),
            scheme=self.get("interaction.scheme"),
            heads=self.get("model.heads"),
            attn_scale=self.get("model.attn_scale"),
            channel_reduction=self.get("model.channel_reduction"),
            mask_target=self.get("model.mask_target"),
            guidance=self.get("model.guidance"),
        )
