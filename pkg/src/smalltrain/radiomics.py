"""Classical 79-value image descriptor: GLCM texture + intensity statistics.

The descriptor concatenates, in this fixed order:

* 72 GLCM features: offsets (1, 2, 4, 6) x angles (0, 45, 90 degrees),
  stats per (offset, angle) pair in the order contrast, dissimilarity,
  homogeneity, angular second moment, correlation, entropy (12 x 6);
* 6 intensity statistics of the image rescaled to [0, 1]: mean, standard
  deviation, and the 2nd..5th central moments;
* 1 Shannon entropy (base 2) of the 256-bin intensity histogram.

Co-occurrence matrices are symmetrized (P + P^T) and normalized to sum 1.
Displacements in (row, col) with row axis pointing down: 0 deg -> (0, +d),
45 deg -> (-d, +d), 90 deg -> (-d, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OFFSETS = (1, 2, 4, 6)
ANGLES = (0, 45, 90)
DEFAULT_LEVELS = 32
GLCM_STAT_NAMES = ("contrast", "dissimilarity", "homogeneity", "asm",
                   "correlation", "entropy")
N_FEATURES = 79

_DISPLACEMENTS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0)}


@dataclass(frozen=True)
class GlcmConfig:
    offsets: tuple = OFFSETS
    angles: tuple = ANGLES
    levels: int = DEFAULT_LEVELS

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"GlcmConfig: need >= 2 gray levels, got {self.levels}")
        bad = [a for a in self.angles if a not in _DISPLACEMENTS]
        if bad:
            raise ValueError(f"GlcmConfig: unsupported angles {bad}")


def _check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-d uint8 image, got shape {img.shape} dtype {img.dtype}")
    return img


def quantize(img, levels: int) -> np.ndarray:
    """Uniformly bin 0..255 intensities into ``levels`` gray levels."""
    img = _check_image(img)
    return (img.astype(np.int64) * levels) // 256


def glcm(img, offset: int, angle: int, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Symmetric normalized gray-level co-occurrence matrix."""
    img = _check_image(img)
    if angle not in _DISPLACEMENTS:
        raise ValueError(f"glcm: unsupported angle {angle}, use one of {sorted(_DISPLACEMENTS)}")
    if offset < 1 or offset >= min(img.shape):
        raise ValueError(f"glcm: offset {offset} must be in [1, min(dims)={min(img.shape)})")
    q = quantize(img, levels)
    dr, dc = (d * offset for d in _DISPLACEMENTS[angle])
    h, w = q.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    a = q[r0:r1, c0:c1].ravel()
    b = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel()
    counts = np.bincount(a * levels + b, minlength=levels * levels).reshape(levels, levels)
    counts = counts.astype(np.float64)
    sym = counts + counts.T
    return sym / sym.sum()


def glcm_stats(matrix: np.ndarray) -> np.ndarray:
    """Six Haralick statistics of a normalized symmetric GLCM: contrast,
    dissimilarity, homogeneity, angular second moment, correlation and
    entropy. A zero-variance marginal makes correlation 0 by convention."""
    p = np.asarray(matrix, dtype=np.float64)
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    diff = i - j
    contrast = float((p * diff ** 2).sum())
    dissimilarity = float((p * np.abs(diff)).sum())
    homogeneity = float((p / (1.0 + diff ** 2)).sum())
    asm = float((p ** 2).sum())
    marg = p.sum(axis=1)
    mu = float((np.arange(n) * marg).sum())
    var = float(((np.arange(n) - mu) ** 2 * marg).sum())
    if var > 0.0:
        correlation = float((p * (i - mu) * (j - mu)).sum() / var)
    else:
        correlation = 0.0
    nz = p[p > 0.0]
    entropy_val = float(-(nz * np.log2(nz)).sum())
    return np.array([contrast, dissimilarity, homogeneity, asm, correlation, entropy_val])


def intensity_stats(img) -> np.ndarray:
    """[mean, std, m2, m3, m4, m5] of intensities rescaled to [0, 1];
    m_k is the k-th central moment."""
    img = _check_image(img)
    x = img.astype(np.float64).ravel() / 255.0
    mean = x.mean()
    centered = x - mean
    m2 = (centered ** 2).mean()
    return np.array([mean, np.sqrt(m2), m2,
                     (centered ** 3).mean(), (centered ** 4).mean(), (centered ** 5).mean()])


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    img = _check_image(img)
    p = np.bincount(img.ravel(), minlength=256) / img.size
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def extract_features(img, config: GlcmConfig = GlcmConfig()) -> np.ndarray:
    """The full 79-value descriptor in the documented fixed order."""
    img = _check_image(img)
    parts = []
    for off in config.offsets:
        for ang in config.angles:
            parts.append(glcm_stats(glcm(img, off, ang, config.levels)))
    parts.append(intensity_stats(img))
    parts.append(np.array([entropy(img)]))
    vec = np.concatenate(parts)
    assert vec.size == N_FEATURES
    return vec


def feature_names(config: GlcmConfig = GlcmConfig()) -> list[str]:
    names = [f"glcm_d{off}_a{ang}_{stat}"
             for off in config.offsets for ang in config.angles
             for stat in GLCM_STAT_NAMES]
    names += ["int_mean", "int_std", "int_m2", "int_m3", "int_m4", "int_m5", "entropy"]
    return names


def write_features_csv(path, image_ids, features: np.ndarray,
                       config: GlcmConfig = GlcmConfig()) -> None:
    """Persist a feature matrix as CSV: image_id column + 79 named columns."""
    import csv

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != N_FEATURES or features.shape[0] != len(image_ids):
        raise ValueError(f"write_features_csv: need ({len(image_ids)}, {N_FEATURES}) matrix, "
                         f"got {features.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id"] + feature_names(config))
        for iid, row in zip(image_ids, features):
            w.writerow([iid] + [repr(v) for v in row.tolist()])


def read_features_csv(path) -> tuple[list[str], np.ndarray]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = [r[0] for r in rows[1:]]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return ids, mat
