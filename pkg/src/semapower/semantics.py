"""Image quality mapping from per-area rate to normalized reconstruction quality.

A reference image is quantized at 1..8 bits; each bit depth's PSNR (or SSIM)
against the original gives the quality reached once the rate density clears
that depth's threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_THRESHOLDS = (0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128)
DEFAULT_PSNR_CAP = 50.0
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)  # uint8, shape (height, width)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (self.height, self.width):
            raise ValueError(f"pixel array shape {px.shape} != ({self.height}, {self.width})")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ValueError("pixels must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))


def quantize(img: GrayImage, bits: int) -> GrayImage:
    """Truncate to ``bits`` bits and reconstruct at the bin midpoint."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    if bits == 8:
        return GrayImage(img.width, img.height, img.pixels.copy())
    shift = 8 - bits
    x = img.pixels.astype(np.int32)
    q = ((x >> shift) << shift) + (1 << (shift - 1))
    return GrayImage(img.width, img.height, np.minimum(q, 255).astype(np.uint8))


def _check_same(a: GrayImage, b: GrayImage):
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")


def psnr(a: GrayImage, b: GrayImage) -> float:
    """PSNR in dB with peak 255; ``math.inf`` when the images are identical."""
    _check_same(a, b)
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def ssim(a: GrayImage, b: GrayImage, block: int = 8) -> float:
    """Mean SSIM over non-overlapping ``block`` x ``block`` tiles.

    Tile statistics are population (1/n) moments. Trailing rows/columns that
    do not fill a whole tile are ignored.
    """
    _check_same(a, b)
    h, w = a.pixels.shape
    if h < block or w < block:
        raise ValueError(f"images must be at least {block}x{block}, got {w}x{h}")
    h2, w2 = h - h % block, w - w % block

    def tiles(img):
        x = img.pixels[:h2, :w2].astype(np.float64)
        return x.reshape(h2 // block, block, w2 // block, block).swapaxes(1, 2).reshape(-1, block * block)

    x, y = tiles(a), tiles(b)
    mx, my = x.mean(axis=1), y.mean(axis=1)
    vx = ((x - mx[:, None]) ** 2).mean(axis=1)
    vy = ((y - my[:, None]) ** 2).mean(axis=1)
    cxy = ((x - mx[:, None]) * (y - my[:, None])).mean(axis=1)
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx ** 2 + my ** 2 + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class QualityModel:
    """Step function from rate density (bits/s/Hz per m^2) to quality in [0, 1].

    ``qualities[b-1]`` is the quality once the density reaches ``thresholds[b-1]``.
    """

    thresholds: tuple[float, ...]
    qualities: tuple[float, ...]
    metric: str = "psnr"
    cap: float = DEFAULT_PSNR_CAP

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        q = np.asarray(self.qualities, dtype=float)
        if t.shape != q.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("thresholds and qualities must be equal-length, nonempty")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("qualities must lie in [0, 1]")

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.qualities) >= 0))

    def __call__(self, density):
        """Vectorized lookup; ``density`` may be a scalar or array."""
        idx = np.searchsorted(np.asarray(self.thresholds), density, side="right")
        table = np.concatenate([[0.0], np.asarray(self.qualities, dtype=float)])
        out = table[idx]
        return float(out) if np.ndim(out) == 0 else out


def build_quality_model(img: GrayImage, metric: str = "psnr", cap: float = DEFAULT_PSNR_CAP,
                        thresholds=DEFAULT_THRESHOLDS) -> QualityModel:
    thresholds = tuple(float(t) for t in thresholds)
    if len(thresholds) != 8:
        raise ValueError(f"expected 8 thresholds (one per bit depth), got {len(thresholds)}")
    qualities = []
    for bits in range(1, 9):
        q_img = quantize(img, bits)
        if metric == "psnr":
            qualities.append(min(psnr(q_img, img), cap) / cap)
        elif metric == "ssim":
            qualities.append(max(0.0, ssim(q_img, img)))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return QualityModel(thresholds, tuple(qualities), metric=metric, cap=cap)


def map_rate_to_quality(model: QualityModel, rate, side):
    """Quality for a UAV delivering ``rate`` bits/s/Hz over a ``side`` x ``side`` square."""
    side = np.asarray(side, dtype=float)
    if np.any(side <= 0):
        raise ValueError("side must be positive")
    return model(np.asarray(rate, dtype=float) / (side * side))
