"""Image and mask file handling.

Images are RGB PNG or PPM, returned as float32 CHW in [0, 1]. Masks are
single-channel 8-bit or 16-bit PNG holding class indices, returned as int32
HW arrays. Color rendering of index maps uses a fixed deterministic palette
so repeated runs write byte-identical files.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import IOFailure, ValidationError


def load_image(path):
    """Decode an RGB image to float32 CHW in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise IOFailure(f"image not found: {path}") from None
    except Exception as exc:
        raise IOFailure(f"cannot decode image {path}: {exc}") from None
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path):
    """Decode a single-channel class-index mask to int32 HW."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16", "P"):
                raise ValidationError(
                    f"mask {path} has mode {im.mode}; need single-channel indices"
                )
            arr = np.asarray(im)
    except FileNotFoundError:
        raise IOFailure(f"mask not found: {path}") from None
    except ValidationError:
        raise
    except Exception as exc:
        raise IOFailure(f"cannot decode mask {path}: {exc}") from None
    if arr.ndim != 2:
        raise ValidationError(f"mask {path} is not single-channel: shape {arr.shape}")
    return arr.astype(np.int32)


def save_mask(path, mask):
    """Write an int class-index map as 8-bit (or 16-bit when needed) PNG."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.min() < 0:
        raise ValidationError(f"save_mask: need non-negative HW indices, got {mask.shape}")
    if mask.max() < 256:
        Image.fromarray(mask.astype(np.uint8), mode="L").save(path, format="PNG")
    elif mask.max() < 65536:
        Image.fromarray(mask.astype(np.uint16)).save(path, format="PNG")
    else:
        raise ValidationError(f"save_mask: index {mask.max()} exceeds 16-bit range")


def save_image(path, chw):
    """Write float CHW in [0, 1] as RGB PNG."""
    arr = np.clip(np.asarray(chw), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"save_image: need 3,H,W array, got {arr.shape}")
    hwc = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(hwc, mode="RGB").save(path, format="PNG")


def color_palette(n):
    """n visually-distinct RGB colors; index 0 is black (unlabeled/background)."""
    rng = np.random.default_rng(47)  # fixed: palette is part of the output contract
    pal = rng.integers(40, 256, size=(max(n, 1), 3), dtype=np.uint8)
    pal[0] = (0, 0, 0)
    return pal


def render_indexed(path, mask, n_classes):
    """Write a colorized PNG of a class-index map using the fixed palette."""
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() >= max(n_classes, 1):
        raise ValidationError(
            f"render_indexed: index range [{mask.min()}, {mask.max()}] outside [0, {n_classes})"
        )
    pal = color_palette(n_classes)
    Image.fromarray(pal[mask], mode="RGB").save(path, format="PNG")


def save_indexed_palette(path, mask, n_classes):
    """Index map as palette PNG: pixel values are class indices, yet the file
    renders colorized. Falls back to a raw 16-bit index map above 256 classes
    (palette PNGs cap at 8 bits), plus a sibling _color.png render."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.min() < 0 or mask.max() >= max(n_classes, 1):
        raise ValidationError(
            f"save_indexed_palette: bad index map shape {mask.shape} / range for {n_classes} classes"
        )
    if n_classes <= 256:
        im = Image.fromarray(mask.astype(np.uint8), mode="P")
        im.putpalette(color_palette(256).ravel().tolist())
        im.save(path, format="PNG")
    else:
        save_mask(path, mask)
        stem, dot, ext = str(path).rpartition(".")
        render_indexed(f"{stem}_color.{ext}" if dot else f"{path}_color", mask, n_classes)


# -- resizing on raw arrays (pipeline side; no gradients involved) -----------


def resize_image(chw, out_h, out_w):
    """Bilinear align-corners resize of a float CHW array."""
    from .tensor import Tensor, bilinear_resize, no_grad

    with no_grad():
        t = Tensor(chw[None].astype(np.float32, copy=False))
        out = bilinear_resize(t, out_h, out_w)
    return out.data[0]


def resize_mask(mask, out_h, out_w):
    """Nearest-neighbor resize; never invents a class index."""
    H, W = mask.shape
    # Pixel-center mapping: out cell i samples in cell floor((i + 0.5) * H / out_h).
    rows = np.minimum(((np.arange(out_h) + 0.5) * H / out_h).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * W / out_w).astype(np.int64), W - 1)
    return np.ascontiguousarray(mask[rows[:, None], cols[None, :]])
