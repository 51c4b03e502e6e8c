"""Synthetic shapes-on-texture samples and uncertainty corpora.

Good enough to overfit at desk scale: a noisy textured background with a
few high-contrast shapes whose union is the mask. A separate generator
emits clustered binary uncertainty maps with an exact occupancy target
for partition benchmarks.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .exceptions import InputError
from .uncertainty import THRESHOLD


@dataclass
class SynthSpec:
    canvas: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    shape_types: tuple = ("disk", "rect", "blob")
    noise: float = 0.05
    occupancy: tuple = (0.05, 0.6)
    seed: int = 0


def _draw_disk(mask, rng):
    h, w = mask.shape
    r = rng.integers(max(h // 10, 2), max(h // 4, 3))
    cy = rng.integers(r, h - r)
    cx = rng.integers(r, w - r)
    yy, xx = np.ogrid[:h, :w]
    mask |= (yy - cy) ** 2 + (xx - cx) ** 2 < r * r


def _draw_rect(mask, rng):
    h, w = mask.shape
    rh = rng.integers(max(h // 8, 2), max(h // 3, 3))
    rw = rng.integers(max(w // 8, 2), max(w // 3, 3))
    y0 = rng.integers(0, h - rh)
    x0 = rng.integers(0, w - rw)
    mask[y0:y0 + rh, x0:x0 + rw] = True


def _draw_blob(mask, rng):
    h, w = mask.shape
    cy, cx = rng.integers(h // 4, 3 * h // 4), rng.integers(w // 4, 3 * w // 4)
    yy, xx = np.ogrid[:h, :w]
    for _ in range(rng.integers(3, 7)):
        r = rng.integers(max(h // 12, 2), max(h // 6, 3))
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        cy = int(np.clip(cy + rng.integers(-r, r + 1), 0, h - 1))
        cx = int(np.clip(cx + rng.integers(-r, r + 1), 0, w - 1))


_DRAW = {"disk": _draw_disk, "rect": _draw_rect, "blob": _draw_blob}


def _one_sample(spec, rng):
    s = spec.canvas
    for _ in range(64):  # resample until occupancy lands in band
        mask = np.zeros((s, s), dtype=bool)
        for _ in range(rng.integers(spec.min_shapes, spec.max_shapes + 1)):
            _DRAW[rng.choice(spec.shape_types)](mask, rng)
        occ = mask.mean()
        if spec.occupancy[0] <= occ <= spec.occupancy[1]:
            break
    bg = rng.uniform(0.1, 0.45)
    fg = rng.uniform(0.6, 0.95)
    tint = rng.uniform(-0.08, 0.08, size=3)
    base = np.where(mask, fg, bg)[:, :, None] + tint[None, None, :]
    image = base + rng.normal(0.0, spec.noise, size=(s, s, 3))
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def generate_samples(spec: SynthSpec, n):
    """Deterministic list of (image [h,w,3] in [0,1], boolean mask) pairs."""
    rng = np.random.default_rng(spec.seed)
    return [_one_sample(spec, rng) for _ in range(n)]


def _grow_cluster(shape, count, rng, occupied):
    """Paint exactly ``count`` pixels by randomized connected growth."""
    h, w = shape
    free = ~occupied
    ys, xs = np.nonzero(free)
    if len(ys) == 0:
        return
    start = rng.integers(len(ys))
    frontier = [(int(ys[start]), int(xs[start]))]
    painted = 0
    while frontier and painted < count:
        i = int(rng.integers(len(frontier)))
        y, x = frontier.pop(i)
        if occupied[y, x]:
            continue
        occupied[y, x] = True
        painted += 1
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not occupied[ny, nx]:
                frontier.append((ny, nx))


def uncertainty_corpus(side, n, occupancy=(0.02, 0.05), clusters=(1, 3), seed=0):
    """Binary-valued uncertainty maps (0 or 0.5) with clustered uncertain
    pixels; each map's occupancy is drawn uniformly from the band."""
    if occupancy[0] <= 0 or occupancy[1] > 1 or occupancy[0] > occupancy[1]:
        raise InputError(f"bad occupancy band {occupancy}")
    rng = np.random.default_rng(seed)
    maps = []
    for _ in range(n):
        target = int(round(rng.uniform(*occupancy) * side * side))
        target = max(target, 1)
        painted = np.zeros((side, side), dtype=bool)
        k = int(rng.integers(clusters[0], clusters[1] + 1))
        split = np.full(k, target // k)
        split[:target % k] += 1
        for part in split:
            _grow_cluster((side, side), int(part), rng, painted)
        maps.append(np.where(painted, THRESHOLD, 0.0).astype(np.float32))
    return maps


def save_dataset(samples, out_dir, stem="synth"):
    """Write PNG pairs plus a manifest; returns the manifest path."""
    img_dir = os.path.join(out_dir, "images")
    msk_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(msk_dir, exist_ok=True)
    lines = []
    for i, (image, mask) in enumerate(samples):
        name = f"{stem}_{i:04d}.png"
        Image.fromarray((image * 255).astype(np.uint8)).save(os.path.join(img_dir, name))
        Image.fromarray(mask.astype(np.uint8) * 255).save(os.path.join(msk_dir, name))
        lines.append(f"images/{name}\tmasks/{name}")
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def save_uncertainty_corpus(maps, out_dir, stem="umap"):
    """Store maps as 8-bit PNGs, scaled x2 so [0, 0.5] fills the range."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, u in enumerate(maps):
        path = os.path.join(out_dir, f"{stem}_{i:04d}.png")
        Image.fromarray((np.asarray(u) * 2.0 * 255).astype(np.uint8)).save(path)
        paths.append(path)
    return paths


def load_uncertainty_corpus(directory):
    """Read back maps stored by :func:`save_uncertainty_corpus`."""
    paths = sorted(
        os.path.join(directory, f) for f in os.listdir(directory)
        if f.lower().endswith(".png")
    )
    return [np.asarray(Image.open(p).convert("L"), dtype=np.float32) / 255.0 / 2.0
            for p in paths]
