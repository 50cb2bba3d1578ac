"""Classical limb-mask extraction: local entropy, Otsu split, noise cleanup."""
from __future__ import annotations

from fractions import Fraction

import numba
import numpy as np
from scipy import ndimage

from .imaging import ImageError, check_gray

ENTROPY_WINDOW = 37
SPECK_FRACTION = 0.01

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


class NoLimbFound(ImageError):
    """The entropy map carries no usable foreground/background split."""

    def __init__(self, detail: str = ""):
        super().__init__("no limb found" + (f": {detail}" if detail else ""))


@numba.njit(cache=True)
def _entropy_kernel(padded, out_h, out_w, win, xlogx):
    out = np.zeros((out_h, out_w))
    n = win * win
    log2n = np.log2(n)
    hist = np.zeros(256, np.int64)
    for r in range(out_h):
        hist[:] = 0
        distinct = 0
        acc = 0.0
        for dy in range(win):
            for dx in range(win):
                v = padded[r + dy, dx]
                c = hist[v]
                if c == 0:
                    distinct += 1
                acc += xlogx[c + 1] - xlogx[c]
                hist[v] = c + 1
        for col in range(out_w):
            if col > 0:
                left = col - 1
                right = col + win - 1
                for dy in range(win):
                    v = padded[r + dy, left]
                    c = hist[v]
                    acc += xlogx[c - 1] - xlogx[c]
                    hist[v] = c - 1
                    if c == 1:
                        distinct -= 1
                    v = padded[r + dy, right]
                    c = hist[v]
                    if c == 0:
                        distinct += 1
                    acc += xlogx[c + 1] - xlogx[c]
                    hist[v] = c + 1
            if distinct > 1:
                h = log2n - acc / n
                out[r, col] = h if h > 0.0 else 0.0
    return out


def entropy_map(img: np.ndarray, window: int = ENTROPY_WINDOW) -> np.ndarray:
    """Shannon entropy (bits) of the 8-bit levels in a square window per pixel.

    Borders are reflected. Uses a sliding histogram, so cost grows with
    ``window`` rather than ``window**2`` per pixel.
    """
    check_gray(img)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    half = window // 2
    padded = np.pad(img, half, mode="reflect")
    counts = np.arange(window * window + 1, dtype=np.float64)
    xlogx = np.zeros_like(counts)
    xlogx[1:] = counts[1:] * np.log2(counts[1:])
    return _entropy_kernel(padded, img.shape[0], img.shape[1], window, xlogx)


def histogram256(values: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256)


def within_class_variance(hist: np.ndarray, t: int) -> float:
    """Weighted sum of the two class variances for split ``<= t`` / ``> t``."""
    return float(_within_exact(hist, t))


def _within_exact(hist, t) -> Fraction:
    levels = range(256)
    total = sum(int(c) for c in hist)
    parts = Fraction(0)
    for lo, hi in ((0, t + 1), (t + 1, 256)):
        c = sum(int(hist[i]) for i in levels[lo:hi])
        if c == 0:
            continue
        s = sum(int(hist[i]) * i for i in levels[lo:hi])
        q = sum(int(hist[i]) * i * i for i in levels[lo:hi])
        # omega * sigma^2 = (c*q - s^2) / (N * c)
        parts += Fraction(c * q - s * s, total * c)
    return parts


def otsu_threshold(hist: np.ndarray) -> int:
    """Bin ``t`` minimizing the within-class variance; class 0 is ``<= t``.

    Evaluated in exact rational arithmetic so ties resolve to the smallest
    ``t`` deterministically.
    """
    hist = np.asarray(hist)
    if hist.shape != (256,) or (hist < 0).any():
        raise ValueError("expected 256 non-negative bin counts")
    if np.count_nonzero(hist) < 2:
        raise ValueError("degenerate histogram: fewer than two occupied bins")
    h = [int(c) for c in hist]
    total = sum(h)
    cnt = np.cumsum(h, dtype=object)
    s1 = np.cumsum([c * i for i, c in enumerate(h)], dtype=object)
    s2 = np.cumsum([c * i * i for i, c in enumerate(h)], dtype=object)
    best_t, best = 0, None
    for t in range(255):
        c0, c1 = cnt[t], total - cnt[t]
        val = Fraction(0)
        if c0:
            val += Fraction(c0 * s2[t] - s1[t] ** 2, c0)
        if c1:
            a, b = s1[-1] - s1[t], s2[-1] - s2[t]
            val += Fraction(c1 * b - a * a, c1)
        if best is None or val < best:
            best_t, best = t, val
    return best_t


def quantize(values: np.ndarray) -> np.ndarray:
    """Linear 256-bin quantization over the observed [min, max]."""
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise NoLimbFound("constant entropy map")
    q = np.floor((values - lo) * (256.0 / (hi - lo)))
    return np.minimum(q, 255).astype(np.uint8)


def fill_component_interiors(fg: np.ndarray) -> np.ndarray:
    """Fill every enclosed background pocket of each 8-connected component."""
    labels, n = ndimage.label(fg, structure=_EIGHT)
    out = fg.copy()
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comp = labels[sl] == idx
        out[sl] |= ndimage.binary_fill_holes(comp, structure=_FOUR)
    return out


def remove_small_components(fg: np.ndarray, fraction: float = SPECK_FRACTION) -> np.ndarray:
    labels, n = ndimage.label(fg, structure=_EIGHT)
    if n == 0:
        return fg.copy()
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    keep = areas >= fraction * areas.sum()
    keep[0] = False
    return keep[labels]


def fill_from_corners(fg: np.ndarray) -> np.ndarray:
    """Background survives only where 4-connected to one of the corners."""
    labels, _ = ndimage.label(~fg, structure=_FOUR)
    h, w = fg.shape
    corner_labels = {labels[0, 0], labels[0, w - 1], labels[h - 1, 0], labels[h - 1, w - 1]}
    corner_labels.discard(0)
    reachable = np.isin(labels, list(corner_labels))
    return ~reachable


def extract_mask(img: np.ndarray, window: int = ENTROPY_WINDOW) -> np.ndarray:
    """Limb mask from an 8-bit radiograph.

    Entropy map, Otsu on its 256-bin quantization, contour filling, speck
    removal (< 1% of total foreground area), then hole removal by flooding
    the background from the four corners.
    """
    check_gray(img)
    ent = entropy_map(img, window)
    q = quantize(ent)
    hist = histogram256(q)
    if np.count_nonzero(hist) < 2:
        raise NoLimbFound("entropy histogram has a single bin")
    t = otsu_threshold(hist)
    fg = q > t
    fg = fill_component_interiors(fg)
    fg = remove_small_components(fg)
    fg = fill_from_corners(fg)
    if not fg.any():
        raise NoLimbFound("empty mask")
    return fg


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    check_gray(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape}")
    return np.where(mask, img, 0).astype(np.uint8)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
