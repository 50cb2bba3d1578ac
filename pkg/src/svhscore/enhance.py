"""Contrast-limited adaptive histogram equalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ImageError, check_gray


@dataclass(frozen=True)
class ClaheConfig:
    clip_limit: float = 2.0
    grid: tuple[int, int] = (8, 8)
    bins: int = 256

    def __post_init__(self):
        if not self.clip_limit > 0:
            raise ValueError("clip_limit must be positive")
        if min(self.grid) < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.bins != 256:
            raise ValueError("only 256-bin histograms are supported")


def _edges(n: int, tiles: int) -> np.ndarray:
    return np.rint(np.linspace(0, n, tiles + 1)).astype(np.intp)


def tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """Mapping of one tile: clipped, uniformly redistributed, cumulated.

    Returns float levels in [0, 255]; a single-valued tile maps to identity.
    """
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    n = float(tile.size)
    if np.count_nonzero(hist) <= 1:
        return np.arange(256, dtype=np.float64)
    ceiling = max(clip_limit * n / 256.0, 1.0)
    excess = np.maximum(hist - ceiling, 0.0).sum()
    if excess > 0:
        hist = np.minimum(hist, ceiling) + excess / 256.0
    return np.cumsum(hist) * (255.0 / n)


def _interp_axis(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centres = (edges[:-1] + edges[1:]) / 2.0
    pos = np.arange(n, dtype=np.float64) + 0.5
    hi = np.searchsorted(centres, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centres) - 1)
    hi = np.clip(hi, 0, len(centres) - 1)
    span = centres[hi] - centres[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, (pos - centres[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(frac, 0.0, 1.0)


def clahe(img: np.ndarray, cfg: ClaheConfig = ClaheConfig()) -> np.ndarray:
    """Equalize ``img`` tile by tile, blending tile mappings bilinearly."""
    check_gray(img)
    h, w = img.shape
    gy, gx = cfg.grid
    if h < gy or w < gx:
        raise ImageError(f"image {h}x{w} smaller than tile grid {gy}x{gx}")
    ye, xe = _edges(h, gy), _edges(w, gx)
    luts = np.empty((gy, gx, 256))
    for j in range(gy):
        for i in range(gx):
            luts[j, i] = tile_lut(img[ye[j]:ye[j + 1], xe[i]:xe[i + 1]], cfg.clip_limit)

    y0, y1, fy = _interp_axis(h, ye)
    x0, x1, fx = _interp_axis(w, xe)
    v = img.astype(np.intp)
    fy = fy[:, None]
    fx = fx[None, :]
    out = (luts[y0[:, None], x0[None, :], v] * (1 - fx)
           + luts[y0[:, None], x1[None, :], v] * fx) * (1 - fy)
    out += (luts[y1[:, None], x0[None, :], v] * (1 - fx)
            + luts[y1[:, None], x1[None, :], v] * fx) * fy
    return np.rint(out).clip(0, 255).astype(np.uint8)
