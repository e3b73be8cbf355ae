"""Desk-scale evaluation metrics.

Features come from a frozen, seeded patch projection at two spatial scales,
so every score is deterministic and self-contained; scores are comparable
within this artifact only.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .image import BinaryMask, RasterImage, resize


class FeatureExtractor:
    """Patch-local random projection features at two scales.

    Non-overlapping patches keep the features equivariant to shifts by whole
    patch strides, which is what makes the Gram score translation-stable.
    """

    def __init__(self, resolution: int = 64, patch_size: int = 4, channels_out: int = 32, seed: int = 0):
        if resolution % (2 * patch_size):
            raise ValueError("resolution must be divisible by twice the patch size")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0xFEA7]))
        p2c = patch_size * patch_size * 3
        self.resolution = resolution
        self.patch_size = patch_size
        self.channels_out = channels_out
        self.weights = ad.float32_snap(rng.standard_normal((p2c, channels_out)) / np.sqrt(p2c))
        self.bias = ad.float32_snap(rng.standard_normal(channels_out) * 0.1)

    def _patch_features(self, arr: np.ndarray) -> np.ndarray:
        h, w = arr.shape[:2]
        p = self.patch_size
        gh, gw = h // p, w // p
        patches = (
            arr[: gh * p, : gw * p]
            .reshape(gh, p, gw, p, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * gw, p * p * 3)
        )
        feats = np.maximum(patches @ self.weights + self.bias, 0.0)
        return feats.reshape(gh, gw, self.channels_out).transpose(2, 0, 1)

    def features(self, img: RasterImage) -> list[np.ndarray]:
        """Feature maps at full and half resolution (each C x h x w)."""
        base = img
        if img.shape != (self.resolution, self.resolution):
            base = resize(img, self.resolution, self.resolution, "bilinear")
        if base.channels == 1:
            base = RasterImage(np.repeat(base.data, 3, axis=2))
        half = resize(base, self.resolution // 2, self.resolution // 2, "bilinear")
        return [self._patch_features(base.data), self._patch_features(half.data)]


_DEFAULT_EXTRACTOR: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    global _DEFAULT_EXTRACTOR
    if _DEFAULT_EXTRACTOR is None:
        _DEFAULT_EXTRACTOR = FeatureExtractor()
    return _DEFAULT_EXTRACTOR


def _gram(feat: np.ndarray) -> np.ndarray:
    c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return (flat @ flat.T) / (c * h * w)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def gram_style_score(
    a: RasterImage, b: RasterImage, extractor: FeatureExtractor | None = None
) -> float:
    """Mean cosine similarity of per-scale Gram matrices; symmetric,
    bounded in [-1, 1], 1.0 for identical images."""
    ex = extractor or default_extractor()
    fa, fb = ex.features(a), ex.features(b)
    scores = [_cosine(_gram(x).ravel(), _gram(y).ravel()) for x, y in zip(fa, fb)]
    return float(np.mean(scores))


def _masked_bbox_region(img: RasterImage, mask: BinaryMask) -> RasterImage:
    m = mask.data.astype(bool)
    if not m.any():
        raise ValueError("mask is empty")
    ys, xs = np.nonzero(m)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    region = img.data[y0:y1, x0:x1] * m[y0:y1, x0:x1, None]
    return RasterImage(region)


def _pooled(ex: FeatureExtractor, img: RasterImage) -> np.ndarray:
    return np.concatenate([f.mean(axis=(1, 2)) for f in ex.features(img)])


def masked_region_similarity(
    img: RasterImage,
    ref: RasterImage,
    mask: BinaryMask,
    extractor: FeatureExtractor | None = None,
) -> float:
    """Cosine similarity between pooled features of the mask-cropped region
    and of the reference processed the same way. Content outside the mask
    cannot influence the score."""
    if mask.shape != img.shape:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape}")
    ex = extractor or default_extractor()
    m = mask.data.astype(bool)
    if not m.any():
        raise ValueError("mask is empty")
    region = _masked_bbox_region(img, mask)
    ys, xs = np.nonzero(m)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    bbox_mask = m[y0:y1, x0:x1]
    ref_sized = ref
    if ref.shape != (y1 - y0, x1 - x0):
        ref_sized = resize(ref, y1 - y0, x1 - x0, "bilinear")
    if ref_sized.channels != img.channels:
        raise ValueError("reference channel count must match the image")
    ref_masked = RasterImage(ref_sized.data * bbox_mask[:, :, None])
    return _cosine(_pooled(ex, region), _pooled(ex, ref_masked))
