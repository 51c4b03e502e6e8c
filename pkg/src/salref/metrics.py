"""Evaluation measures for saliency maps.

All functions take a float prediction in [0, 1] and a boolean ground
truth, both 2D. The alignment, structure and weighted-F measures follow
their original definitions (Fan et al. for E and S, Margolin et al. for
the weighted F), including the conventional handling of degenerate
all-background / all-foreground ground truths. The alignment score is
normalized by the full pixel count so a perfect prediction scores
exactly 1.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from .exceptions import InputError

EPS = np.spacing(1)
N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / N_THRESHOLDS  # all strictly below 1


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InputError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim != 2:
        raise InputError(f"expected 2D maps, got {pred.ndim}D")
    if pred.min() < 0 or pred.max() > 1:
        raise InputError("prediction outside [0, 1]")
    return pred, gt.astype(bool)


def mae(pred, gt):
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt.astype(np.float64)).mean())


def _alignment_phi(fm, gt):
    if not gt.any():
        return 1.0 - fm.astype(np.float64)
    if gt.all():
        return fm.astype(np.float64)
    dfm = fm - fm.mean()
    dgt = gt.astype(np.float64) - gt.mean()
    align = 2.0 * dfm * dgt / (dfm ** 2 + dgt ** 2 + EPS)
    return (align + 1.0) ** 2 / 4.0


def e_measure_curve(pred, gt):
    pred, gt = _check_pair(pred, gt)
    return np.array([_alignment_phi(pred > t, gt).mean() for t in THRESHOLDS])


def e_measure(pred, gt):
    """Mean alignment score over the threshold sweep (the headline value)."""
    return float(e_measure_curve(pred, gt).mean())


def e_measure_all(pred, gt):
    curve = e_measure_curve(pred, gt)
    p, g = _check_pair(pred, gt)
    adaptive_t = min(2.0 * p.mean(), 1.0)
    return {
        "e_mean": float(curve.mean()),
        "e_max": float(curve.max()),
        "e_adaptive": float(_alignment_phi(p > adaptive_t, g).mean()),
    }


def _object_score(values):
    x = values.mean() if values.size else 0.0
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x ** 2 + 1.0 + sigma + EPS)


def _region_ssim(pred, gt):
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    a = 4.0 * x * y * sxy
    b = (x ** 2 + y ** 2) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def _centroid(gt):
    rows, cols = gt.shape
    total = gt.sum()
    ys, xs = np.nonzero(gt)
    cy = int(np.round((ys + 1).sum() / total))
    cx = int(np.round((xs + 1).sum() / total))
    return min(max(cy, 1), rows - 1), min(max(cx, 1), cols - 1)


def s_measure(pred, gt, alpha=0.5):
    pred, gt = _check_pair(pred, gt)
    mu = gt.mean()
    if mu == 0:
        return float(1.0 - pred.mean())
    if mu == 1:
        return float(pred.mean())

    fg = np.where(gt, pred, 0.0)
    bg = np.where(gt, 0.0, 1.0 - pred)
    s_object = mu * _object_score(fg[gt]) + (1.0 - mu) * _object_score(bg[~gt])

    cy, cx = _centroid(gt)
    gt_f = gt.astype(np.float64)
    area = gt.size
    s_region = 0.0
    for ys, xs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, None)),
                   (slice(cy, None), slice(0, cx)), (slice(cy, None), slice(cx, None))):
        g_part = gt_f[ys, xs]
        s_region += (g_part.size / area) * _region_ssim(pred[ys, xs], g_part)

    return float(max(alpha * s_object + (1.0 - alpha) * s_region, 0.0))


def _matlab_gauss2d(shape=(7, 7), sigma=5.0):
    m, n = [(s - 1) / 2.0 for s in shape]
    y, x = np.ogrid[-m:m + 1, -n:n + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    h[h < np.finfo(float).eps * h.max()] = 0
    return h / h.sum()


def weighted_f(pred, gt, beta2=1.0):
    """Weighted F-measure: errors are spread along the foreground's
    distance field, so undersaturated or shadowed foregrounds score
    strictly lower than saturated ones."""
    pred, gt = _check_pair(pred, gt)
    if not gt.any():
        warnings.warn("weighted_f: empty ground truth, returning 0", stacklevel=2)
        return 0.0
    err = np.abs(pred - gt.astype(np.float64))
    # nearest-foreground ties resolve to the smallest column then row (the
    # transform's deterministic rule; the reference oracle pins the same)
    dist, idx = distance_transform_edt(~gt, return_indices=True)
    err_t = err.copy()
    err_t[~gt] = err[idx[0][~gt], idx[1][~gt]]
    err_smooth = convolve(err_t, _matlab_gauss2d(), mode="constant", cval=0.0)
    err_min = np.where(gt & (err_smooth < err), err_smooth, err)
    boost = np.ones_like(err)
    boost[~gt] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~gt])
    ew = err_min * boost
    tp_w = gt.sum() - ew[gt].sum()
    fp_w = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    return float((1.0 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


def fmeasure_curve(pred, gt, beta2=0.3):
    """Per-threshold precision, recall and F over the standard sweep."""
    pred, gt = _check_pair(pred, gt)
    n_fg = gt.sum()
    precision = np.empty(N_THRESHOLDS)
    recall = np.empty(N_THRESHOLDS)
    for i, t in enumerate(THRESHOLDS):
        binary = pred > t
        tp = np.logical_and(binary, gt).sum()
        precision[i] = tp / (binary.sum() + EPS)
        recall[i] = tp / (n_fg + EPS)
    f = (1.0 + beta2) * precision * recall / (beta2 * precision + recall + EPS)
    return precision, recall, f


def mean_curves(pairs, beta2=0.3):
    """Dataset curves: per-threshold means of precision/recall/F."""
    acc = np.zeros((3, N_THRESHOLDS))
    count = 0
    for pred, gt in pairs:
        p, r, f = fmeasure_curve(pred, gt, beta2=beta2)
        acc += np.stack([p, r, f])
        count += 1
    if count == 0:
        raise InputError("no prediction/ground-truth pairs supplied")
    return {"threshold": THRESHOLDS.copy(), "precision": acc[0] / count,
            "recall": acc[1] / count, "fmeasure": acc[2] / count}


def evaluate_pair(pred, gt):
    row = {"mae": mae(pred, gt)}
    row.update(e_measure_all(pred, gt))
    row["s_measure"] = s_measure(pred, gt)
    row["weighted_f"] = weighted_f(pred, gt)
    return row


AGGREGATE_KEYS = ("mae", "e_mean", "e_max", "e_adaptive", "s_measure", "weighted_f")


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)   # (name, row) pairs
    aggregate: dict = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, named_pairs):
        report = cls()
        for name, pred, gt in named_pairs:
            report.per_image.append((name, evaluate_pair(pred, gt)))
        if report.per_image:
            rows = [row for _, row in report.per_image]
            report.aggregate = {
                k: float(np.mean([r[k] for r in rows])) for k in AGGREGATE_KEYS
            }
        return report
