"""Raster I/O and geometric standardization of radiographs.

Rasters are plain numpy arrays:

* gray raster  -- ``uint8`` array of shape ``(height, width)``
* unit raster  -- ``float64`` array in ``[0, 1]``
* binary mask  -- ``bool`` array
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

TARGET_HEIGHT = 1500
TARGET_WIDTH = 1200

# fraction of rows removed from the bottom of the frame
_CROP_DIVISOR = {True: 7, False: 4}


class ImageError(ValueError):
    """Raised for unreadable, unsupported or degenerate rasters."""


class LimbKind(enum.Enum):
    HandLeft = "LH"
    HandRight = "RH"
    FootLeft = "LF"
    FootRight = "RF"

    @property
    def is_hand(self) -> bool:
        return self in (LimbKind.HandLeft, LimbKind.HandRight)

    @property
    def is_left(self) -> bool:
        return self in (LimbKind.HandLeft, LimbKind.FootLeft)

    @property
    def limb_type(self) -> str:
        return "hand" if self.is_hand else "foot"

    @classmethod
    def parse(cls, code: str) -> "LimbKind":
        try:
            return cls(code.upper())
        except ValueError:
            raise ValueError(f"unknown limb code {code!r}; expected one of LH, RH, LF, RF") from None


def check_gray(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 2:
        raise ImageError("expected a 2-D raster")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ImageError("zero-dimension image")
    if img.dtype != np.uint8:
        raise ImageError(f"expected uint8 levels, got {img.dtype}")
    return img


def load_gray(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG or binary PGM file as an 8-bit single-channel raster.

    Colour inputs are reduced to luminance with the ITU-R 601 weights.
    """
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".png", ".pgm", ".pbm"):
        raise ImageError(f"unsupported format {ext!r}: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.format not in ("PNG", "PPM"):
                raise ImageError(f"unsupported format {im.format}: {path}")
            arr = _to_luminance(im)
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageError(f"unreadable image {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return arr


def _to_luminance(im: Image.Image) -> np.ndarray:
    if im.mode == "L":
        return np.asarray(im, dtype=np.uint8).copy()
    if im.mode == "1":
        return np.where(np.asarray(im), 255, 0).astype(np.uint8)
    if im.mode in ("I;16", "I;16B", "I"):
        a = np.asarray(im).astype(np.float64)
        top = 65535.0 if a.max() > 255 else 255.0
        return np.rint(a * 255.0 / top).clip(0, 255).astype(np.uint8)
    rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    luma = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
    return np.rint(luma).clip(0, 255).astype(np.uint8)


def save_gray(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a gray raster as PNG or binary PGM, chosen by extension."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    check_gray(img)
    if ext == ".png":
        Image.fromarray(img, mode="L").save(path, format="PNG", optimize=False)
    elif ext == ".pgm":
        h, w = img.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(img).tobytes())
    else:
        raise ImageError(f"unsupported output format {ext!r}")


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Write a boolean mask as a 1-bit PNG or a P4 PBM."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    mask = np.asarray(mask, dtype=bool)
    if ext == ".png":
        Image.fromarray(mask).convert("1").save(path, format="PNG")
    elif ext == ".pbm":
        h, w = mask.shape
        # PBM convention: 1 = black, so foreground (white) is written as 0
        packed = np.packbits(~mask, axis=1)
        with open(path, "wb") as fh:
            fh.write(b"P4\n%d %d\n" % (w, h))
            fh.write(packed.tobytes())
    else:
        raise ImageError(f"unsupported mask format {ext!r}")


def load_mask(path: str | os.PathLike) -> np.ndarray:
    return load_gray(path) > 127


def normalize(img: np.ndarray) -> np.ndarray:
    """Map 8-bit levels onto the unit interval."""
    check_gray(img)
    return img.astype(np.float64) / 255.0


def to_gray(unit: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # pixel-centre alignment; identity when n_in == n_out
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a 2-D array; returns float64."""
    h, w = img.shape
    a = img.astype(np.float64, copy=False)
    if (h, w) == (out_h, out_w):
        return a.copy()
    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.intp), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.intp), w - 1)
    return arr[ys][:, xs]


@dataclass(frozen=True)
class PadGeometry:
    """Where the scaled content sits inside the padded frame."""

    scale: float
    content_h: int
    content_w: int
    top: int
    left: int


def pad_geometry(h: int, w: int, target_h: int, target_w: int) -> PadGeometry:
    s = min(target_h / h, target_w / w)
    ch = min(target_h, max(1, int(round(h * s))))
    cw = min(target_w, max(1, int(round(w * s))))
    return PadGeometry(s, ch, cw, (target_h - ch) // 2, (target_w - cw) // 2)


def resize_pad(img: np.ndarray, target_h: int = TARGET_HEIGHT,
               target_w: int = TARGET_WIDTH) -> np.ndarray:
    """Scale to fit ``target_h x target_w`` keeping aspect, pad with black.

    The margin is split evenly between opposing borders; an odd remainder
    goes to the bottom/right.
    """
    check_gray(img)
    if target_h <= 0 or target_w <= 0:
        raise ValueError("target dimensions must be positive")
    h, w = img.shape
    if (h, w) == (target_h, target_w):
        return img.copy()
    g = pad_geometry(h, w, target_h, target_w)
    content = resize_bilinear(img, g.content_h, g.content_w)
    out = np.zeros((target_h, target_w), dtype=np.uint8)
    out[g.top:g.top + g.content_h, g.left:g.left + g.content_w] = (
        np.rint(content).clip(0, 255).astype(np.uint8))
    return out


def crop_rows_kept(height: int, limb: LimbKind) -> int:
    return height - height // _CROP_DIVISOR[limb.is_hand]


def crop_limb(img: np.ndarray, limb: LimbKind) -> np.ndarray:
    """Drop the bottom seventh (hands) or quarter (feet) of the frame."""
    check_gray(img)
    if img.shape[0] < 8:
        raise ImageError("image too small to crop (height < 8)")
    return img[:crop_rows_kept(img.shape[0], limb)].copy()
