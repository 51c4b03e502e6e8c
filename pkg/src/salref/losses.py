"""Supervision terms: pixel BCE, soft IoU, cross-level consistency.

The written definitions sum over pixels; training uses the per-pixel
mean so the loss scale is resolution independent (sum = mean * H * W for
BCE/consistency, IoU is already a per-image ratio). ``reduction="sum"``
recovers the literal per-image sums averaged over the batch.

Weighted alternates (border-weighted BCE/IoU, adaptive pixel intensity)
are included as config-gated switches for ablation wiring; their
weighting definitions follow F3Net and TRACER respectively.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .exceptions import ConfigError, InputError

CLAMP_EPS = 1e-6
HEAD_IDS = ("s1", "s2", "s3", "r1", "r2", "r3")
VARIANTS = ("bce", "bce+iou", "bce+iou+sc", "wbce+wiou", "api")


def _check_pair(pred, gt):
    if pred.shape != gt.shape:
        raise InputError(f"prediction {tuple(pred.shape)} vs target {tuple(gt.shape)}")


def _reduce(per_pixel, reduction):
    if reduction == "mean":
        return per_pixel.mean()
    if reduction == "sum":
        return per_pixel.sum(dim=tuple(range(1, per_pixel.dim()))).mean()
    raise ConfigError(f"unknown reduction {reduction!r}")


def bce_loss(pred, gt, reduction="mean"):
    """Pixelwise cross entropy; prediction clamped to [eps, 1-eps]."""
    _check_pair(pred, gt)
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    per_pixel = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
    return _reduce(per_pixel, reduction)


def iou_loss(pred, gt):
    """1 - soft intersection over union, averaged over the batch.

    The epsilon guard sits in both numerator and denominator so a perfect
    prediction scores exactly zero even on an empty target.
    """
    _check_pair(pred, gt)
    dims = tuple(range(1, pred.dim()))
    inter = (pred * gt).sum(dim=dims)
    union = (pred + gt - pred * gt).sum(dim=dims)
    return (1.0 - (inter + CLAMP_EPS) / (union + CLAMP_EPS)).mean()


def sc_loss(finer, coarser, reduction="mean"):
    """L1 between adjacent-level predictions; the coarser side is detached
    so its gradient stays untouched by the finer level."""
    _check_pair(finer, coarser)
    return _reduce((finer - coarser.detach()).abs(), reduction)


def _border_weights(gt):
    # emphasis grows near mask borders (31x31 local contrast), per F3Net
    return 1.0 + 5.0 * (F.avg_pool2d(gt, 31, stride=1, padding=15) - gt).abs()


def weighted_bce_iou(pred, gt):
    _check_pair(pred, gt)
    weit = _border_weights(gt)
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    bce = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
    wbce = (weit * bce).sum(dim=(2, 3)) / weit.sum(dim=(2, 3))
    inter = (pred * gt * weit).sum(dim=(2, 3))
    union = ((pred + gt) * weit).sum(dim=(2, 3))
    wiou = 1.0 - (inter + 1.0) / (union - inter + 1.0)
    return wbce.mean(), wiou.mean()


def api_loss(pred, gt):
    """Adaptive pixel intensity loss (per TRACER): multi-scale border
    weights modulate BCE, IoU and L1 jointly."""
    _check_pair(pred, gt)
    w = sum(
        (F.avg_pool2d(gt, k, stride=1, padding=k // 2) - gt).abs()
        for k in (3, 15, 31)
    )
    omega = 1.0 + 0.5 * w * gt
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    bce = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
    abce = (omega * bce).sum(dim=(2, 3)) / (omega + 0.5).sum(dim=(2, 3))
    inter = (pred * gt * omega).sum(dim=(2, 3))
    union = ((pred + gt) * omega).sum(dim=(2, 3))
    aiou = 1.0 - (inter + 1.0) / (union - inter + 1.0)
    amae = (omega * (pred - gt).abs()).sum(dim=(2, 3)) / (
        (omega - 1.0).sum(dim=(2, 3)) + CLAMP_EPS
    )
    return (0.7 * abce + 0.7 * aiou + 0.7 * amae).mean()


@dataclass
class LossReport:
    bce: dict = field(default_factory=dict)
    iou: dict = field(default_factory=dict)
    sc: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)  # weighted-variant terms
    total: torch.Tensor = None

    def to_record(self):
        rec = {f"bce.{k}": v for k, v in self.bce.items()}
        rec.update({f"iou.{k}": v for k, v in self.iou.items()})
        rec.update({f"sc.{k}": v for k, v in self.sc.items()})
        rec.update({f"extra.{k}": v for k, v in self.extra.items()})
        rec["total"] = float(self.total.detach())
        return rec


def total_loss(heads, gt, variant="bce+iou+sc", reduction="mean"):
    """Multilevel supervision over six heads (three decoder, three refined).

    ``heads`` maps ids s1..s3, r1..r3 to probability maps at the target
    resolution. The consistency pairs run finer-against-detached-coarser
    on the decoder heads only.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"loss variant must be one of {VARIANTS}, got {variant!r}")
    missing = [h for h in HEAD_IDS if h not in heads]
    if missing:
        raise ConfigError(f"missing heads: {missing}")
    report = LossReport()
    terms = []
    for hid in HEAD_IDS:
        pred = heads[hid]
        if variant == "wbce+wiou":
            wbce, wiou = weighted_bce_iou(pred, gt)
            report.extra[f"wbce.{hid}"] = float(wbce.detach())
            report.extra[f"wiou.{hid}"] = float(wiou.detach())
            terms += [wbce, wiou]
        elif variant == "api":
            term = api_loss(pred, gt)
            report.extra[f"api.{hid}"] = float(term.detach())
            terms.append(term)
        else:
            b = bce_loss(pred, gt, reduction)
            report.bce[hid] = float(b.detach())
            terms.append(b)
            if variant in ("bce+iou", "bce+iou+sc"):
                i = iou_loss(pred, gt)
                report.iou[hid] = float(i.detach())
                terms.append(i)
    if variant == "bce+iou+sc":
        for fine, coarse in (("s1", "s2"), ("s2", "s3")):
            s = sc_loss(heads[fine], heads[coarse], reduction)
            report.sc[f"{fine}-{coarse}"] = float(s.detach())
            terms.append(s)
    report.total = sum(terms)
    return report
