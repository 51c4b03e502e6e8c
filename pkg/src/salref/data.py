"""Dataset IO and augmentation.

Manifests are UTF-8 text, one sample per line:
``image_path<TAB>mask_path[<TAB>tag,tag,...]``; relative paths resolve
against the manifest's directory. Masks must match their image's size
and are binarized at 128. Images resize bilinearly, masks with nearest
neighbour, so binarity survives the whole pipeline.
"""

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image, ImageEnhance

from .exceptions import InputError


@dataclass
class SampleRecord:
    image_path: str
    mask_path: str
    split: str = "train"
    tags: tuple = ()


def load_manifest(path, split="train"):
    """Parse and validate a manifest; raises on the first bad record."""
    if not os.path.isfile(path):
        raise InputError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise InputError(f"{path}:{lineno}: expected image<TAB>mask")
            img = os.path.join(base, parts[0])
            msk = os.path.join(base, parts[1])
            tags = tuple(t for t in parts[2].split(",") if t) if len(parts) > 2 else ()
            for p in (img, msk):
                if not os.path.isfile(p):
                    raise InputError(f"{path}:{lineno}: missing file {p}")
            with Image.open(img) as im, Image.open(msk) as mm:
                if im.size != mm.size:
                    raise InputError(
                        f"{path}:{lineno}: size mismatch between {img} {im.size} "
                        f"and {msk} {mm.size}"
                    )
            records.append(SampleRecord(img, msk, split, tags))
    return records


@dataclass
class AugmentConfig:
    enable: bool = True
    rotate_deg: float = 15.0
    crop_scale: float = 0.75      # lower bound of the kept-area fraction
    photometric: float = 0.2      # +- jitter for contrast/brightness/sharpness


def _rotate_pair(image, mask, angle):
    angle = float(angle) % 360
    if angle == 0:
        return image, mask
    if angle % 90 == 0:
        op = {90: Image.ROTATE_90, 180: Image.ROTATE_180, 270: Image.ROTATE_270}[angle]
        return image.transpose(op), mask.transpose(op)
    return (image.rotate(angle, resample=Image.BILINEAR, fillcolor=0),
            mask.rotate(angle, resample=Image.NEAREST, fillcolor=0))


def draw_augment_params(rng, cfg: AugmentConfig, size):
    """Sample one set of transform parameters (shared by image and mask)."""
    w, h = size
    angle = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg) if cfg.rotate_deg > 0 else 0.0
    box = None
    if cfg.crop_scale < 1.0:
        frac = np.sqrt(rng.uniform(cfg.crop_scale, 1.0))
        cw, ch = max(int(round(w * frac)), 1), max(int(round(h * frac)), 1)
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        box = (x0, y0, x0 + cw, y0 + ch)
    factors = [1.0 + rng.uniform(-cfg.photometric, cfg.photometric)
               for _ in range(3)] if cfg.photometric > 0 else [1.0] * 3
    return angle, box, factors


def apply_geometry(image, mask, angle, box, size):
    image, mask = _rotate_pair(image, mask, angle)
    if box is not None:
        image = image.crop(box).resize(size, Image.BILINEAR)
        mask = mask.crop(box).resize(size, Image.NEAREST)
    return image, mask


def augment(image, mask, seed, cfg: AugmentConfig = None):
    """Jointly augment a PIL image/mask pair, deterministically per seed.

    Geometric transforms hit both maps with identical parameters;
    photometric jitter touches the image only. Returns float arrays:
    image [h,w,3] in [0,1] (the trailing normalization), mask [h,w]
    boolean.
    """
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    if cfg.enable:
        angle, box, factors = draw_augment_params(rng, cfg, image.size)
        image, mask = apply_geometry(image, mask, angle, box, image.size)
        for enhancer, factor in zip((ImageEnhance.Contrast, ImageEnhance.Brightness,
                                     ImageEnhance.Sharpness), factors):
            if factor != 1.0:
                image = enhancer(image).enhance(factor)
    arr = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    msk = np.asarray(mask.convert("L")) > 127
    return arr, msk


def _to_pil(sample, resolution):
    """Normalize any supported sample form to resized PIL (image, mask)."""
    if isinstance(sample, SampleRecord):
        image = Image.open(sample.image_path).convert("RGB")
        mask = Image.open(sample.mask_path).convert("L")
    else:
        arr, msk = sample
        image = Image.fromarray((np.clip(arr, 0, 1) * 255).astype(np.uint8))
        mask = Image.fromarray((np.asarray(msk, dtype=np.uint8)) * 255)
    size = (resolution, resolution)
    if image.size != size:
        image = image.resize(size, Image.BILINEAR)
    if mask.size != size:
        mask = mask.resize(size, Image.NEAREST)
    return image, mask


class SaliencyDataset(torch.utils.data.Dataset):
    """Square-resized samples with per-record deterministic augmentation.

    ``samples`` may hold :class:`SampleRecord` entries or in-memory
    (image array, mask array) pairs from the synthetic generator. The
    per-item RNG is seeded by (base seed, epoch, index), so worker
    parallelism or resumption never changes the stream.
    """

    def __init__(self, samples, resolution, augment_cfg=None, seed=0):
        self.samples = list(samples)
        self.resolution = resolution
        self.augment_cfg = augment_cfg or AugmentConfig(enable=False)
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch):
        self.epoch = epoch

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        image, mask = _to_pil(self.samples[index], self.resolution)
        arr, msk = augment(image, mask, (self.seed, self.epoch, index), self.augment_cfg)
        img_t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
        msk_t = torch.from_numpy(msk.astype(np.float32))[None]
        return img_t, msk_t


def batches(dataset, batch_size, rng=None):
    """Deterministic batch iterator; shuffles when given a generator."""
    order = np.arange(len(dataset))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        imgs, msks = zip(*(dataset[int(i)] for i in idx))
        yield torch.stack(imgs), torch.stack(msks)
