"""PNG round-trips, mask depth selection, palettes, resizes."""
import numpy as np
import pytest

from sceneparse.errors import IOFailure, ValidationError
from sceneparse.imgio import (
    color_palette, load_image, load_mask, resize_image, resize_mask,
    render_indexed, save_image, save_indexed_palette, save_mask,
)


def test_image_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((3, 5, 7)).astype(np.float32)
    p = tmp_path / "a.png"
    save_image(p, img)
    back = load_image(p)
    assert back.shape == (3, 5, 7) and back.dtype == np.float32
    want = np.round(img * 255.0) / 255.0
    assert np.allclose(back, want, atol=1e-7)


def test_save_image_clips_out_of_range(tmp_path):
    img = np.array([[[-0.5, 2.0]]], dtype=np.float32).repeat(3, axis=0)
    p = tmp_path / "clip.png"
    save_image(p, img)
    back = load_image(p)
    assert back[0, 0, 0] == 0.0 and back[0, 0, 1] == 1.0


def test_save_image_rejects_bad_shape(tmp_path):
    with pytest.raises(ValidationError):
        save_image(tmp_path / "x.png", np.zeros((5, 7, 3), dtype=np.float32))


def test_mask_round_trip_8_and_16_bit(tmp_path):
    small = np.array([[0, 1], [200, 255]], dtype=np.int64)
    p8 = tmp_path / "m8.png"
    save_mask(p8, small)
    assert np.array_equal(load_mask(p8), small)

    big = np.array([[0, 256], [40000, 65535]], dtype=np.int64)
    p16 = tmp_path / "m16.png"
    save_mask(p16, big)
    back = load_mask(p16)
    assert np.array_equal(back, big)
    assert back.dtype in (np.int32, np.int64)


def test_mask_rejects_negative_or_too_wide(tmp_path):
    with pytest.raises(ValidationError):
        save_mask(tmp_path / "neg.png", np.array([[-1]]))
    with pytest.raises(ValidationError):
        save_mask(tmp_path / "wide.png", np.array([[70000]]))


def test_load_image_missing_file():
    with pytest.raises(IOFailure):
        load_image("/nonexistent/nothing.png")
    with pytest.raises(IOFailure):
        load_mask("/nonexistent/nothing.png")


def test_load_image_undecodable(tmp_path):
    p = tmp_path / "junk.png"
    p.write_text("this is not a png")
    with pytest.raises(IOFailure):
        load_image(p)


def test_resize_image_constant_and_shape():
    img = np.full((3, 4, 6), 0.25, dtype=np.float32)
    out = resize_image(img, 8, 3)
    assert out.shape == (3, 8, 3)
    assert np.allclose(out, 0.25)


def test_resize_mask_nearest_exact_harmonics():
    mask = np.array([[1, 2], [3, 4]], dtype=np.int64)
    up = resize_mask(mask, 4, 4)
    assert np.array_equal(up, np.array([[1, 1, 2, 2],
                                        [1, 1, 2, 2],
                                        [3, 3, 4, 4],
                                        [3, 3, 4, 4]]))
    down = resize_mask(up, 2, 2)
    assert np.array_equal(down, mask)
    # nearest never invents values
    rng = np.random.default_rng(4)
    m = rng.integers(0, 7, (9, 13))
    out = resize_mask(m, 5, 21)
    assert set(np.unique(out)) <= set(np.unique(m))


def test_color_palette_properties():
    pal = color_palette(16)
    assert pal.shape == (16, 3) and pal.dtype == np.uint8
    assert pal[0].tolist() == [0, 0, 0]
    assert np.array_equal(pal, color_palette(16))
    # a palette twice the size starts with the same colors
    assert np.array_equal(color_palette(32)[:16], pal)
    # no duplicate colors among the first 64
    big = color_palette(64)
    assert len({tuple(c) for c in big}) == 64


def test_indexed_palette_round_trip(tmp_path):
    mask = np.array([[0, 1, 2], [3, 2, 1]], dtype=np.int64)
    p = tmp_path / "idx.png"
    save_indexed_palette(p, mask, n_classes=4)
    assert np.array_equal(load_mask(p), mask)


def test_render_indexed_writes_rgb(tmp_path):
    mask = np.array([[0, 1], [2, 3]], dtype=np.int64)
    p = tmp_path / "vis.png"
    render_indexed(p, mask, n_classes=4)
    img = load_image(p)
    assert img.shape == (3, 2, 2)
    pal = color_palette(4)
    got = np.round(img * 255.0).astype(np.uint8)
    assert np.array_equal(got[:, 0, 0], np.zeros(3, dtype=np.uint8))
    assert np.array_equal(got[:, 0, 1], pal[1])
