"""Uncertainty maps derived from a saliency prediction.

A pixel predicted near 0.5 is ambiguous; the raw map 0.5 - |S - 0.5| is
smoothed with a small Gaussian so isolated pixels spread into regions.
Values live in [0, 0.5]; anything above the 0.01 cutoff counts as
uncertain when building attention masks or partition occupancies.
"""

import torch
import torch.nn.functional as F

from .attention import NEG_INF
from .exceptions import InputError

THRESHOLD = 0.5       # certainty pivot: predictions at 0 or 1 are fully certain
CUTOFF = 0.01         # binarization level for "uncertain" pixels
KERNEL_SIZE = 7
KERNEL_SIGMA = 1.0


def gaussian_kernel(size=KERNEL_SIZE, sigma=KERNEL_SIGMA, dtype=torch.float32, device=None):
    """Normalized 2D Gaussian, sum exactly 1."""
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=dtype, device=device) - half
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = torch.outer(g, g)
    return k / k.sum()


def uncertainty_from_prediction(s):
    """Map a probability map [b,1,h,w] to its smoothed uncertainty in [0, 0.5].

    Replicate padding keeps constant maps fixed points of the smoothing.
    """
    if s.dim() != 4 or s.shape[1] != 1:
        raise InputError(f"expected [b,1,h,w] probability map, got {tuple(s.shape)}")
    if s.min() < 0 or s.max() > 1:
        raise InputError(
            f"prediction outside [0,1]: min={float(s.min()):.4g} max={float(s.max()):.4g}"
        )
    raw = THRESHOLD - (s - THRESHOLD).abs()
    k = gaussian_kernel(dtype=s.dtype, device=s.device)[None, None]
    pad = KERNEL_SIZE // 2
    padded = F.pad(raw, (pad, pad, pad, pad), mode="replicate")
    return F.conv2d(padded, k)


def binarize(u):
    """Boolean map of uncertain pixels (strictly above the cutoff)."""
    return u > CUTOFF


def uncertainty_mask(u, n_query, key_hw, target="key"):
    """Build the additive {0, -inf} attention mask from an uncertainty map.

    ``u`` [b,1,h,w] is bilinearly resampled to the key grid, thresholded,
    and broadcast across queries: certain key positions are blocked. With
    ``target="query"`` the same map blocks certain query rows instead
    (the key grid is then the query grid).
    """
    kh, kw = key_hw
    if u.shape[2:] != (kh, kw):
        u = F.interpolate(u, size=(kh, kw), mode="bilinear", align_corners=False)
    uncertain = binarize(u).flatten(1)  # [b, kh*kw]
    b = u.shape[0]
    if target == "key":
        rows = torch.where(uncertain, 0.0, NEG_INF).to(u.dtype)
        return rows[:, None, :].expand(b, n_query, kh * kw).contiguous()
    if target == "query":
        if n_query != kh * kw:
            raise InputError("query masking needs query and key grids to coincide")
        cols = torch.where(uncertain, 0.0, NEG_INF).to(u.dtype)
        return cols[:, :, None].expand(b, n_query, kh * kw).contiguous()
    raise InputError(f"unknown mask target {target!r}")
