"""Training-time and test-time augmentation for 8-bit grayscale images.

Images are plain (H, W) uint8 arrays. The training transform chain is:
resize to a fixed width preserving the dataset's dominant aspect ratio,
then per-sample random horizontal flip (p=0.5), random rotation within
+/-10 degrees (bilinear, zero fill) and a random square crop. Test-time
augmentation predicts on four randomly augmented copies plus a
center-cropped original and averages the outputs.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

RESIZE_WIDTH = 250
CROP_SIZE = 236
MAX_ROTATION_DEG = 10.0
FLIP_PROB = 0.5
TTA_COPIES = 4


def _check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected a 2-d uint8 image, got shape {img.shape} dtype {img.dtype}")
    return img


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resample; equal sizes return the
    input unchanged and constant images stay constant."""
    h, w = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    src = img.astype(np.float64)

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        c = np.clip(c, 0.0, n_in - 1.0)
        lo = np.floor(c).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    ry0, ry1, fy = coords(out_h, h)
    rx0, rx1, fx = coords(out_w, w)
    top = src[ry0][:, rx0] * (1 - fx) + src[ry0][:, rx1] * fx
    bot = src[ry1][:, rx0] * (1 - fx) + src[ry1][:, rx1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.rint(out).clip(0, 255).astype(np.uint8)


def resize_width(img, target_width: int = RESIZE_WIDTH, aspect: float = 1.0) -> np.ndarray:
    """Resize to the target width; height = round(target_width * aspect).

    ``aspect`` is the height/width ratio to enforce (the most common
    ratio of the source dataset; 1.0 for square sources).
    """
    img = _check_image(img)
    if img.shape[1] < 2:
        raise ValueError(f"resize_width: width must be >= 2, got {img.shape[1]}")
    out_h = int(round(target_width * aspect))
    return _bilinear_resize(img, out_h, target_width)


def hflip(img) -> np.ndarray:
    """Reflect over the central vertical line."""
    return np.ascontiguousarray(_check_image(img)[:, ::-1])


def rotate(img, angle_deg: float) -> np.ndarray:
    """Rotate about the image center, bilinear resampling, zero fill."""
    img = _check_image(img)
    if angle_deg == 0.0:
        return img.copy()
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse map: rotate destination coordinates by -theta
    sy = cos_t * yy + sin_t * xx + cy
    sx = -sin_t * yy + cos_t * xx + cx
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy, fx = sy - y0, sx - x0
    out = np.zeros((h, w), dtype=np.float64)
    src = img.astype(np.float64)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        ys, xs = y0 + dy, x0 + dx
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        out[ok] += wgt[ok] * src[ys[ok], xs[ok]]
    return np.rint(out).clip(0, 255).astype(np.uint8)


def center_crop(img, crop: int = CROP_SIZE) -> np.ndarray:
    img = _check_image(img)
    h, w = img.shape
    if h < crop or w < crop:
        raise ValueError(f"center_crop: image {img.shape} smaller than crop {crop}")
    top, left = (h - crop) // 2, (w - crop) // 2
    return img[top:top + crop, left:left + crop].copy()


def random_augment(img, rng: np.random.Generator, crop: int = CROP_SIZE,
                   max_angle: float = MAX_ROTATION_DEG, flip_prob: float = FLIP_PROB) -> np.ndarray:
    """Random flip, rotation and crop; output is always (crop, crop).

    Draw order is fixed (flip decision, angle, crop offsets) so a seeded
    generator reproduces the transform exactly.
    """
    img = _check_image(img)
    h, w = img.shape
    if h < crop or w < crop:
        raise ValueError(f"random_augment: image {img.shape} smaller than crop {crop}x{crop}")
    if rng.random() < flip_prob:
        img = hflip(img)
    angle = rng.uniform(-max_angle, max_angle)
    img = rotate(img, angle)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    return img[top:top + crop, left:left + crop].copy()


def tta_predict(predict: Callable[[np.ndarray], np.ndarray], img,
                rng: np.random.Generator, crop: int = CROP_SIZE,
                n_copies: int = TTA_COPIES,
                augment_fn: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
                reference_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Average ``predict`` over a center-cropped original plus n_copies
    randomly augmented copies.

    The mean is anchored on the first prediction (x0 + sum(xi - x0)/n) so
    that identical copies average to the single prediction bit for bit.
    """
    if augment_fn is None:
        augment_fn = lambda im, r: random_augment(im, r, crop=crop)
    if reference_fn is None:
        reference_fn = lambda im: center_crop(im, crop=crop)
    preds = [np.asarray(predict(reference_fn(img)), dtype=np.float64)]
    for _ in range(n_copies):
        preds.append(np.asarray(predict(augment_fn(img, rng)), dtype=np.float64))
    base = preds[0]
    delta = np.zeros_like(base)
    for p in preds[1:]:
        delta += p - base
    return base + delta / len(preds)
