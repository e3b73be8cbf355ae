"""Raster image and binary mask primitives shared by every pipeline stage.

Pixels are floats in [0, 1]; masks are strictly {0, 1}. 8-bit PNG values are
converted at the I/O boundary with round-half-up. All operations here are pure
functions over immutable inputs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class RasterImage:
    """H x W x C raster with finite float values in [0, 1]; C is 1 or 3."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected 2-d or 3-d pixel data, got ndim={arr.ndim}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"degenerate image shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.data.shape[0], self.data.shape[1])

    def copy(self) -> "RasterImage":
        return RasterImage(self.data)

    def __repr__(self) -> str:
        return f"RasterImage({self.height}x{self.width}x{self.channels})"


class BinaryMask:
    """H x W mask holding exactly the values 0 and 1."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-d, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"degenerate mask shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        else:
            arr = np.array(arr, copy=True)
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask values must be exactly 0 or 1")
            arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        """Number of 1-pixels."""
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not self.data.any()

    def copy(self) -> "BinaryMask":
        return BinaryMask(self.data)

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, ones={self.count()})"


@dataclass(frozen=True)
class EdgeConfig:
    """Thresholds are fractions of the maximum gradient magnitude."""

    low_threshold: float = 0.1
    high_threshold: float = 0.2
    blur_sigma: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.low_threshold < 1.0):
            raise ValueError(f"low_threshold must be in (0,1), got {self.low_threshold}")
        if not (0.0 < self.high_threshold < 1.0):
            raise ValueError(f"high_threshold must be in (0,1), got {self.high_threshold}")
        if self.low_threshold > self.high_threshold:
            raise ValueError("low_threshold must not exceed high_threshold")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be non-negative")

    @classmethod
    def background_detail(cls) -> "EdgeConfig":
        """Lower low threshold to reveal finer structure in background regions."""
        return cls(low_threshold=0.05, high_threshold=0.2, blur_sigma=1.0)


# ---------------------------------------------------------------------------
# resize


def _sample_coords(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-center source coordinates; identity when n_out == n_in."""
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def _resize_array_bilinear(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    hi, wi = arr.shape[:2]
    ys = np.clip(_sample_coords(h, hi), 0.0, hi - 1)
    xs = np.clip(_sample_coords(w, wi), 0.0, wi - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, hi - 1)
    x1 = np.minimum(x0 + 1, wi - 1)
    wy = (ys - y0).reshape(-1, 1, 1)
    wx = (xs - x0).reshape(1, -1, 1)
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return top * (1 - wy) + bot * wy


def _resize_array_nearest(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    hi, wi = arr.shape[:2]
    ys = np.clip(np.floor(_sample_coords(h, hi) + 0.5).astype(int), 0, hi - 1)
    xs = np.clip(np.floor(_sample_coords(w, wi) + 0.5).astype(int), 0, wi - 1)
    return arr[np.ix_(ys, xs)]


def resize(obj, h: int, w: int, mode: str = "bilinear"):
    """Resize an image or mask to h x w.

    Masks resized with ``nearest`` stay binary by construction; with
    ``bilinear`` the interpolated field is thresholded at 0.5 so the result
    is still a valid BinaryMask.
    """
    if h < 1 or w < 1:
        raise ValueError(f"target dimensions must be >= 1, got {h}x{w}")
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    if isinstance(obj, RasterImage):
        arr = obj.data
        if mode == "nearest":
            out = _resize_array_nearest(arr, h, w)
        else:
            out = _resize_array_bilinear(arr, h, w)
        return RasterImage(out)
    if isinstance(obj, BinaryMask):
        if mode == "nearest":
            out = _resize_array_nearest(obj.data, h, w)
            return BinaryMask(out)
        field = _resize_array_bilinear(obj.data.astype(np.float64)[:, :, None], h, w)[:, :, 0]
        return BinaryMask(field >= 0.5)
    raise TypeError(f"cannot resize object of type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# compositing


def composite(fg: RasterImage, bg: RasterImage, mask: BinaryMask) -> RasterImage:
    """mask*fg + (1-mask)*bg, pixel-exact."""
    if fg.shape != bg.shape or fg.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: fg {fg.shape}, bg {bg.shape}, mask {mask.shape}"
        )
    if fg.channels != bg.channels:
        raise ValueError(
            f"channel mismatch: fg {fg.channels}, bg {bg.channels}"
        )
    m = mask.data.astype(np.float64)[:, :, None]
    return RasterImage(m * fg.data + (1.0 - m) * bg.data)


# ---------------------------------------------------------------------------
# mask distortion


def _smooth_unit_noise(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Smooth per-pixel noise in [0, 1]: coarse grid upsampled bilinearly."""
    h, w = shape
    ch = max(2, h // 8 + 1)
    cw = max(2, w // 8 + 1)
    coarse = rng.random((ch, cw))
    return _resize_array_bilinear(coarse[:, :, None], h, w)[:, :, 0]


def distort_mask(mask: BinaryMask, seed: int) -> BinaryMask:
    """Randomly expand mask boundaries outward by 3 to 6 pixels.

    A pixel at Euclidean distance d from the mask joins it when
    d < 3 + 3*n(p), where n(p) is seeded smooth noise in [0, 1]. The result
    therefore always contains the input and is always contained in the
    dilation of the input by 6 pixels.
    """
    if mask.is_empty():
        return mask.copy()
    rng = np.random.default_rng(seed)
    noise = _smooth_unit_noise(mask.shape, rng)
    dist = ndimage.distance_transform_edt(mask.data == 0)
    out = dist < 3.0 + 3.0 * noise
    return BinaryMask(out)


def dilate(mask: BinaryMask, radius: float) -> BinaryMask:
    """Morphological dilation by a Euclidean disk of the given radius."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if mask.is_empty():
        return mask.copy()
    dist = ndimage.distance_transform_edt(mask.data == 0)
    return BinaryMask(dist <= radius)


# ---------------------------------------------------------------------------
# edge detection (blur -> Sobel -> non-maximum suppression -> hysteresis)

# forward/backward neighbour offsets per gradient-direction bin (0/45/90/135 deg)
_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _gradient(img_gray: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    sm = ndimage.gaussian_filter(img_gray, sigma) if sigma > 0 else img_gray
    gx = ndimage.sobel(sm, axis=1)
    gy = ndimage.sobel(sm, axis=0)
    return gx, gy


def edge_detect(img: RasterImage, cfg: EdgeConfig | None = None) -> BinaryMask:
    """Canny-style binary edge map with threshold-tunable sensitivity."""
    if cfg is None:
        cfg = EdgeConfig()
    gray = img.data.mean(axis=2)
    gx, gy = _gradient(gray, cfg.blur_sigma)
    mag = np.hypot(gx, gy)
    mx = mag.max()
    if mx <= 0.0:
        return BinaryMask(np.zeros(img.shape, dtype=np.uint8))

    h, w = mag.shape
    ang = np.arctan2(gy, gx)
    ang = np.where(ang < 0, ang + np.pi, ang)
    bins = np.round(ang / (np.pi / 4)).astype(int) % 4

    magp = np.pad(mag, 1)
    keep = np.zeros_like(mag, dtype=bool)
    for b, (dr, dc) in enumerate(_NMS_OFFSETS):
        fwd = magp[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        bwd = magp[1 - dr : 1 - dr + h, 1 - dc : 1 - dc + w]
        # >= forward but strictly > backward: a two-pixel plateau keeps one side
        keep |= (bins == b) & (mag >= fwd) & (mag > bwd)
    keep &= mag > 0
    keep[0, :] = keep[-1, :] = False
    keep[:, 0] = keep[:, -1] = False

    weak = keep & (mag >= cfg.low_threshold * mx)
    strong = keep & (mag >= cfg.high_threshold * mx)
    if not strong.any():
        return BinaryMask(np.zeros(img.shape, dtype=np.uint8))
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    good = np.unique(labels[strong])
    out = weak & np.isin(labels, good[good > 0])
    return BinaryMask(out)


# ---------------------------------------------------------------------------
# PNG I/O (8-bit, round-half-up at the boundary)


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def image_to_png_bytes(img: RasterImage) -> bytes:
    arr = _to_uint8(img.data)
    if img.channels == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> RasterImage:
    pil = PILImage.open(io.BytesIO(data))
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return RasterImage(arr)


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    arr = (mask.data * 255).astype(np.uint8)
    pil = PILImage.fromarray(arr, mode="L")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> BinaryMask:
    pil = PILImage.open(io.BytesIO(data))
    if pil.mode != "L":
        pil = pil.convert("L")
    arr = np.asarray(pil)
    return BinaryMask(arr >= 128)


def write_image_png(img: RasterImage, path) -> None:
    with open(path, "wb") as f:
        f.write(image_to_png_bytes(img))


def read_image_png(path) -> RasterImage:
    with open(path, "rb") as f:
        return image_from_png_bytes(f.read())


def write_mask_png(mask: BinaryMask, path) -> None:
    with open(path, "wb") as f:
        f.write(mask_to_png_bytes(mask))


def read_mask_png(path) -> BinaryMask:
    with open(path, "rb") as f:
        return mask_from_png_bytes(f.read())
