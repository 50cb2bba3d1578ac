import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from svhscore.imaging import (ImageError, LimbKind, crop_limb, load_gray, normalize,
                              pad_geometry, resize_pad, save_gray, to_gray)


def test_pgm_fixture_bytes(tmp_path):
    p = tmp_path / "tiny.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_gray(p)
    assert img.dtype == np.uint8
    assert img.tolist() == [[0, 128], [255, 64]]


def test_empty_file_is_unreadable(tmp_path):
    p = tmp_path / "empty.png"
    p.write_bytes(b"")
    with pytest.raises(ImageError, match="unreadable"):
        load_gray(p)


def test_unsupported_extension(tmp_path):
    p = tmp_path / "x.jpg"
    p.write_bytes(b"whatever")
    with pytest.raises(ImageError, match="unsupported"):
        load_gray(p)


def test_rgb_white_is_255_and_luma_weights(tmp_path):
    rgb = np.array([[[255, 255, 255], [100, 50, 200]]], dtype=np.uint8)
    p = tmp_path / "c.png"
    Image.fromarray(rgb, "RGB").save(p)
    img = load_gray(p)
    assert img[0, 0] == 255
    assert img[0, 1] == round(0.299 * 100 + 0.587 * 50 + 0.114 * 200)


@pytest.mark.parametrize("ext", [".png", ".pgm"])
def test_save_load_roundtrip(tmp_path, rng, ext):
    img = rng.integers(0, 256, (17, 23), dtype=np.uint8)
    p = tmp_path / ("r" + ext)
    save_gray(p, img)
    assert np.array_equal(load_gray(p), img)


@pytest.mark.parametrize("bad", [np.zeros((3, 3, 3), np.uint8), np.zeros((0, 4), np.uint8),
                                 np.zeros((4, 4), np.float64)])
def test_check_gray_rejects(bad):
    with pytest.raises(ImageError):
        resize_pad(bad)


def test_normalize_examples():
    img = np.array([[255, 0, 51]], dtype=np.uint8)
    assert normalize(img).tolist() == [[1.0, 0.0, 0.2]]


def test_normalize_roundtrip_every_level():
    levels = np.arange(256, dtype=np.uint8)[None]
    assert np.array_equal(to_gray(normalize(levels)), levels)
    assert np.array_equal(np.rint(normalize(levels) * 255).astype(np.uint8), levels)


def test_resize_pad_exact_half():
    img = np.full((3000, 2400), 90, np.uint8)
    out = resize_pad(img)
    assert out.shape == (1500, 1200)
    assert (out == 90).all()


def test_resize_pad_square_gets_150_black_rows():
    img = np.full((1200, 1200), 200, np.uint8)
    out = resize_pad(img)
    assert out.shape == (1500, 1200)
    assert (out[:150] == 0).all() and (out[1350:] == 0).all()
    assert (out[150:1350] == 200).all()


def test_resize_pad_identity_on_conforming(rng):
    img = rng.integers(0, 256, (1500, 1200), dtype=np.uint8)
    out = resize_pad(img)
    assert np.array_equal(out, img)
    assert np.array_equal(resize_pad(out), out)


def test_odd_margin_goes_bottom_right():
    g = pad_geometry(10, 10, 13, 10)
    assert (g.top, g.content_h) == (1, 10)
    assert 13 - g.top - g.content_h == 2


def test_resize_pad_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        resize_pad(np.zeros((4, 4), np.uint8), 0, 5)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 400), w=st.integers(1, 400),
       th=st.integers(8, 200), tw=st.integers(8, 200))
def test_pad_geometry_keeps_aspect(h, w, th, tw):
    g = pad_geometry(h, w, th, tw)
    assert g.content_h <= th and g.content_w <= tw
    assert g.content_h == th or g.content_w == tw
    tol = max(1 / g.content_h, 1 / g.content_w)
    # rounding each side by up to half a pixel bounds the ratio drift
    assert abs(g.content_w / g.content_h - w / h) <= tol * (1 + w / h) + 1e-12


@pytest.mark.parametrize("limb,h,kept", [
    (LimbKind.HandRight, 1500, 1286), (LimbKind.FootLeft, 1500, 1125), (LimbKind.HandLeft, 7, None)])
def test_crop_examples(limb, h, kept):
    img = np.arange(h * 5, dtype=np.int64).reshape(h, 5).astype(np.uint8)
    if kept is None:
        with pytest.raises(ImageError):
            crop_limb(img, limb)
        return
    out = crop_limb(img, limb)
    assert out.shape == (kept, 5)
    assert np.array_equal(out[0], img[0])


@settings(max_examples=50, deadline=None)
@given(h=st.integers(8, 300), w=st.integers(1, 30), hand=st.booleans())
def test_crop_keeps_width_and_top_row(h, w, hand):
    limb = LimbKind.HandRight if hand else LimbKind.FootRight
    img = (np.arange(h * w) % 251).reshape(h, w).astype(np.uint8)
    out = crop_limb(img, limb)
    assert out.shape == (h - h // (7 if hand else 4), w)
    assert np.array_equal(out[0], img[0])


def test_limb_kind_properties():
    assert LimbKind.parse("lh") is LimbKind.HandLeft
    assert LimbKind.HandLeft.is_left and LimbKind.HandLeft.is_hand
    assert LimbKind.FootRight.limb_type == "foot" and not LimbKind.FootRight.is_left
    with pytest.raises(ValueError):
        LimbKind.parse("XX")


def test_operations_are_pure(rng):
    img = rng.integers(0, 256, (37, 29), dtype=np.uint8)
    copy = img.copy()
    a, b = resize_pad(img, 50, 40), resize_pad(img, 50, 40)
    assert np.array_equal(a, b) and np.array_equal(img, copy)
