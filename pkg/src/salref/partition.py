"""Adaptive dynamic partitioning of masked attention.

A window whose uncertain-pixel occupancy is low is split into four equal
quadrants and the children are examined in turn; a blurry window (high
occupancy) or one at the minimum size is attended whole, restricted by
the uncertainty mask. Fully-certain windows are skipped outright: the
masked-attention guard would return a zero update anyway, so skipping
only removes cost. Splitting stops at odd window sides.

Occupancy follows the literal recursion rule: a quadrant's uncertain
count is divided by its PARENT window's area, which caps occupancy at
0.25 per quadrant; ``normalize_by_window`` switches to the quadrant's
own area. Threshold sentinels: 0 collapses to one global attention, 1
recurses everywhere down to ``min_size`` (uniform window attention).
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .attention import from_tokens, mask_attention, to_tokens
from .exceptions import ConfigError, InputError
from .uncertainty import binarize, uncertainty_mask

MODES = ("adp", "global", "fixed-window", "random-window")
HIST_BINS = 10


@dataclass
class PartitionConfig:
    p_threshold: float = 0.2
    min_size: int = 0          # 0 -> derived as max(side/32, 1) at call time
    mode: str = "adp"
    normalize_by_window: bool = False
    seed: int = 0              # only consumed by random-window mode

    def validate(self):
        if not 0.0 <= self.p_threshold <= 1.0:
            raise ConfigError(f"p_threshold must be in [0,1], got {self.p_threshold}")
        if self.min_size < 0:
            raise ConfigError(f"min_size must be >= 1 (or 0 for auto), got {self.min_size}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        return self

    def resolved_min_size(self, side):
        return self.min_size if self.min_size >= 1 else max(side // 32, 1)


@dataclass
class PartitionNode:
    y0: int
    x0: int
    h: int
    w: int
    occupancy: float
    decision: str              # "recurse" | "attend"
    depth: int
    uncertain_count: int
    children: list = None

    @property
    def slices(self):
        return (slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w))


@dataclass
class CostReport:
    mac_count: int = 0         # query*key*channel MACs over attended leaves
    leaf_count: int = 0
    max_depth: int = 0
    occupancy_histogram: list = field(default_factory=lambda: [0] * HIST_BINS)
    attended_count: int = 0
    skipped_count: int = 0

    def merge(self, other):
        self.mac_count += other.mac_count
        self.leaf_count += other.leaf_count
        self.max_depth = max(self.max_depth, other.max_depth)
        self.occupancy_histogram = [
            a + b for a, b in zip(self.occupancy_histogram, other.occupancy_histogram)
        ]
        self.attended_count += other.attended_count
        self.skipped_count += other.skipped_count
        return self


def _hist_bin(p):
    return min(int(p * HIST_BINS), HIST_BINS - 1)


def _splittable(h, w, min_size):
    return h > min_size and h % 2 == 0 and w % 2 == 0


def _wants_split(cfg, p, node_key):
    if cfg.mode == "fixed-window":
        return True
    if cfg.mode == "random-window":
        rng = np.random.default_rng((cfg.seed,) + node_key)
        return bool(rng.random() < 0.5)
    return p < cfg.p_threshold


def build_partition(u_bin, cfg: PartitionConfig, image_key=0):
    """Build the quadtree over a binarized uncertainty map [h, w].

    The root is split unconditionally when its geometry allows; every
    other node records the occupancy that decided its fate.
    """
    u_bin = np.asarray(u_bin, dtype=bool)
    h, w = u_bin.shape
    min_size = cfg.resolved_min_size(h)
    total = int(u_bin.sum())

    def make(y0, x0, hh, ww, parent_area, depth, is_root=False):
        count = int(u_bin[y0:y0 + hh, x0:x0 + ww].sum())
        p = count / parent_area
        node = PartitionNode(y0, x0, hh, ww, p, "attend", depth, count)
        if _splittable(hh, ww, min_size) and (
            is_root or _wants_split(cfg, p, (image_key, y0, x0, hh))
        ):
            node.decision = "recurse"
            h2, w2 = hh // 2, ww // 2
            child_area = (h2 * w2) if cfg.normalize_by_window else hh * ww
            node.children = [
                make(y0 + dy * h2, x0 + dx * w2, h2, w2, child_area, depth + 1)
                for dy in (0, 1) for dx in (0, 1)
            ]
        return node

    return make(0, 0, h, w, max(h * w, 1), 0, is_root=True)


def iter_leaves(node):
    if node.decision == "attend":
        yield node
        return
    for child in node.children:
        yield from iter_leaves(child)


def tree_report(root, channels):
    report = CostReport()
    for leaf in iter_leaves(root):
        report.leaf_count += 1
        report.max_depth = max(report.max_depth, leaf.depth)
        report.occupancy_histogram[_hist_bin(leaf.occupancy)] += 1
        if leaf.uncertain_count == 0:
            report.skipped_count += 1
        else:
            n = leaf.h * leaf.w
            report.mac_count += n * n * channels
            report.attended_count += 1
    return report


def _global_report(h, w, occupancy, channels):
    n = h * w
    report = CostReport(mac_count=n * n * channels, leaf_count=1, max_depth=0,
                        attended_count=1)
    report.occupancy_histogram[_hist_bin(occupancy)] += 1
    return report


def _validate_inputs(x, l, u):
    if x.shape[2:] != l.shape[2:] or x.shape[2:] != u.shape[2:]:
        raise InputError(
            f"spatial dims disagree: x {tuple(x.shape[2:])}, "
            f"l {tuple(l.shape[2:])}, u {tuple(u.shape[2:])}"
        )
    if x.shape[0] != l.shape[0] or x.shape[0] != u.shape[0]:
        raise InputError("batch sizes disagree")
    if u.shape[1] != 1:
        raise InputError(f"uncertainty map must be single-channel, got {u.shape[1]}")


def partitioned_attention(x, l, u, cfg: PartitionConfig, projections,
                          heads=1, scale=False, mask_target="key"):
    """Masked attention between x (queries) and l (keys/values), windowed
    by the adaptive partition of u. Returns the refined map (residual
    included: output = x + per-window attention updates) and a
    :class:`CostReport` aggregated over the batch.
    """
    cfg.validate()
    _validate_inputs(x, l, u)
    b, c, h, w = x.shape
    width = projections.k_proj.out_features

    if cfg.mode == "global" or cfg.p_threshold == 0.0:
        q, k, v = projections(to_tokens(x), to_tokens(l))
        mask = uncertainty_mask(u, h * w, (h, w), target=mask_target)
        update = mask_attention(mask, q, k, v, scale=scale, heads=heads)
        report = CostReport()
        u_bin = binarize(u)
        for i in range(b):
            occ = float(u_bin[i].sum()) / (h * w)
            report.merge(_global_report(h, w, occ, width))
        return x + from_tokens(update, h, w), report

    q_map = from_tokens(projections.q_proj(to_tokens(x)), h, w)
    k_map = from_tokens(projections.k_proj(to_tokens(l)), h, w)
    v_map = from_tokens(projections.v_proj(to_tokens(l)), h, w)
    u_bin = binarize(u)

    out = x.clone()
    report = CostReport()
    for i in range(b):
        root = build_partition(u_bin[i, 0].cpu().numpy(), cfg, image_key=i)
        report.merge(tree_report(root, width))
        for leaf in iter_leaves(root):
            if leaf.uncertain_count == 0:
                continue
            ys, xs = leaf.slices
            qw = to_tokens(q_map[i:i + 1, :, ys, xs])
            kw = to_tokens(k_map[i:i + 1, :, ys, xs])
            vw = to_tokens(v_map[i:i + 1, :, ys, xs])
            mask = uncertainty_mask(
                u[i:i + 1, :, ys, xs], leaf.h * leaf.w, (leaf.h, leaf.w),
                target=mask_target,
            )
            update = mask_attention(mask, qw, kw, vw, scale=scale, heads=heads)
            out[i:i + 1, :, ys, xs] = (
                x[i:i + 1, :, ys, xs] + from_tokens(update, leaf.h, leaf.w)
            )
    return out, report


def _np_linear(tokens, linear):
    wt = linear.weight.detach().cpu().numpy().astype(np.float64)
    bias = linear.bias.detach().cpu().numpy().astype(np.float64)
    return tokens @ wt.T + bias


def _np_masked_attention(qw, kw, vw, uncertain_keys, mask_target):
    n_q = qw.shape[0]
    out = np.zeros((n_q, vw.shape[1]))
    live = np.flatnonzero(uncertain_keys) if mask_target == "key" else np.arange(kw.shape[0])
    queries = range(n_q) if mask_target == "key" else np.flatnonzero(uncertain_keys)
    if len(live) == 0:
        return out
    for qi in queries:
        logits = np.array([float(qw[qi] @ kw[ki]) for ki in live])
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        for wgt, ki in zip(weights, live):
            out[qi] += wgt * vw[ki]
    return out


def dense_reference(x, l, u, cfg: PartitionConfig, projections, mask_target="key"):
    """Straight-line float64 recomputation of :func:`partitioned_attention`.

    Enumerates the leaf decomposition with an explicit worklist and runs
    per-leaf masked attention with plain numpy loops. Intended for small
    inputs (<= 32x32) in equivalence tests.
    """
    cfg.validate()
    _validate_inputs(x, l, u)
    b, c, h, w = x.shape
    xs = x.detach().cpu().numpy().astype(np.float64)
    ls = l.detach().cpu().numpy().astype(np.float64)
    us = u.detach().cpu().numpy().astype(np.float64)
    out = xs.copy()
    for i in range(b):
        u_bin = us[i, 0] > 0.01
        if cfg.mode == "global" or cfg.p_threshold == 0.0:
            leaves = [(0, 0, h, w)]
        else:
            min_size = cfg.resolved_min_size(h)
            leaves = []
            work = [(0, 0, h, w, h * w, True)]
            while work:
                y0, x0, hh, ww, parent_area, is_root = work.pop()
                count = int(u_bin[y0:y0 + hh, x0:x0 + ww].sum())
                p = count / parent_area
                can_split = hh > min_size and hh % 2 == 0 and ww % 2 == 0
                if cfg.mode == "fixed-window":
                    split = can_split
                elif cfg.mode == "random-window":
                    rng = np.random.default_rng((cfg.seed, i, y0, x0, hh))
                    split = can_split and bool(rng.random() < 0.5)
                else:
                    split = can_split and (is_root or p < cfg.p_threshold)
                if split:
                    h2, w2 = hh // 2, ww // 2
                    child_area = h2 * w2 if cfg.normalize_by_window else hh * ww
                    for dy in (0, 1):
                        for dx in (0, 1):
                            work.append((y0 + dy * h2, x0 + dx * w2, h2, w2,
                                         child_area, False))
                else:
                    leaves.append((y0, x0, hh, ww))
        for (y0, x0, hh, ww) in leaves:
            keys = u_bin[y0:y0 + hh, x0:x0 + ww].reshape(-1)
            if cfg.mode != "global" and cfg.p_threshold != 0.0 and not keys.any():
                continue
            x_tok = xs[i, :, y0:y0 + hh, x0:x0 + ww].reshape(c, -1).T
            l_tok = ls[i, :, y0:y0 + hh, x0:x0 + ww].reshape(c, -1).T
            qw = _np_linear(x_tok, projections.q_proj)
            kw = _np_linear(l_tok, projections.k_proj)
            vw = _np_linear(l_tok, projections.v_proj)
            upd = _np_masked_attention(qw, kw, vw, keys, mask_target)
            out[i, :, y0:y0 + hh, x0:x0 + ww] += upd.T.reshape(c, hh, ww)
    return out


def cost_compare(u_corpus, cfg_list, channels=64):
    """Tabulate attention cost per (uncertainty map, partition config).

    Returns one row dict per pair with the CSV columns
    map_id, mode, p_threshold, mac_count, leaf_count, max_depth.
    """
    rows = []
    for map_id, u in enumerate(u_corpus):
        arr = np.asarray(u.detach().cpu().numpy() if torch.is_tensor(u) else u)
        arr = arr.reshape(arr.shape[-2], arr.shape[-1])
        u_bin = arr > 0.01
        h, w = u_bin.shape
        for cfg in cfg_list:
            cfg.validate()
            if cfg.mode == "global" or cfg.p_threshold == 0.0:
                occ = float(u_bin.sum()) / (h * w)
                report = _global_report(h, w, occ, channels)
            else:
                root = build_partition(u_bin, cfg, image_key=map_id)
                report = tree_report(root, channels)
            rows.append({
                "map_id": map_id,
                "mode": cfg.mode,
                "p_threshold": cfg.p_threshold,
                "mac_count": report.mac_count,
                "leaf_count": report.leaf_count,
                "max_depth": report.max_depth,
            })
    return rows
