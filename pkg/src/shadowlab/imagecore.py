"""Pixel-level primitives: colour conversions, window filters, resampling.

Images are float64 numpy arrays with samples in ``[0, 1]``: ``(H, W)`` for
single-channel data and ``(H, W, 3)`` for RGB. Every function here is pure.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import InvalidInputError
from .validation import check_image, check_radius

# BT.601 full-range luma weights
LUMA_R = 0.299
LUMA_G = 0.587
LUMA_B = 0.114


@dataclass(frozen=True)
class FilterConfig:
    """Window radii for the background-estimation filters.

    A radius ``r`` means a ``(2r+1) x (2r+1)`` square window; ``0`` is the
    identity. Borders are always replicated.
    """

    dilate_radius: int = 4
    median_radius_pre: int = 5
    median_radius_post: int = 3

    def __post_init__(self):
        check_radius(self.dilate_radius, "dilate_radius")
        check_radius(self.median_radius_pre, "median_radius_pre")
        check_radius(self.median_radius_post, "median_radius_post")


def _luma(rgb):
    # this summation order makes white map to exactly 1.0
    return LUMA_B * rgb[..., 2] + LUMA_R * rgb[..., 0] + LUMA_G * rgb[..., 1]


def to_gray(img):
    """BT.601 luma of an RGB image, returned as an ``(H, W)`` array."""
    img = check_image(img, channels=3)
    return _luma(img)


def rgb_to_ycrcb(img):
    """Full-range BT.601 YCrCb with chroma centred on 0.5.

    Channel order is ``(Y, Cr, Cb)``. ``Y`` is computed exactly as in
    :func:`to_gray`.
    """
    img = check_image(img, channels=3)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = _luma(img)
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5
    return np.stack([y, cr, cb], axis=-1)


def rgb_to_hsv(img):
    """Hexcone HSV with all three channels in ``[0, 1]``."""
    img = check_image(img, channels=3)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc,
                 np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def dilate(img, radius):
    """Grayscale dilation: sliding-window maximum with replicated borders."""
    img = check_image(img, channels=1)
    check_radius(radius)
    if radius == 0:
        return img.copy()
    size = 2 * radius + 1
    return ndimage.grey_dilation(img, size=(size, size), mode="nearest")


def median_filter(img, radius):
    """Sliding-window median over a square window with replicated borders."""
    img = check_image(img, channels=1)
    check_radius(radius)
    if radius == 0:
        return img.copy()
    size = 2 * radius + 1
    return ndimage.median_filter(img, size=(size, size), mode="nearest")


def histogram_equalize(img, bins=256, ignore_zero=False):
    """Map every sample to the empirical CDF of its histogram bin.

    Parameters
    ----------
    img : ndarray of shape (H, W)
    bins : int
        Number of uniform bins over ``[0, 1]``.
    ignore_zero : bool
        When True, exact zeros stay zero and the CDF is built from the
        nonzero samples only. Mask templates use this so that unshadowed
        pixels keep the value 0.
    """
    img = check_image(img, channels=1)
    if bins < 2:
        raise InvalidInputError(f"bins must be >= 2, got {bins}")
    idx = np.minimum((img * bins).astype(np.int64), bins - 1)
    support = img > 0 if ignore_zero else np.ones(img.shape, dtype=bool)
    n = int(support.sum())
    out = np.zeros_like(img)
    if n == 0:
        return out
    counts = np.bincount(idx[support], minlength=bins)
    cdf = np.cumsum(counts) / n
    out[support] = cdf[idx[support]]
    return out


def affine_crop(img, scale=1.0, rotation=0.0, offset=(0.0, 0.0), size=512):
    """Scale and rotate ``img`` about its centre, then crop a square window.

    The output pixel at the window centre samples the input at
    ``centre + offset`` (``offset`` is ``(dy, dx)`` in input pixels).
    Positive ``rotation`` (degrees) turns content counter-clockwise, matching
    ``np.rot90``. Sampling is bilinear; out-of-canvas reads replicate the
    border.
    """
    img = check_image(img)
    if not scale > 0:
        raise InvalidInputError(f"scale must be > 0, got {scale}")
    size = int(size)
    if size < 1:
        raise InvalidInputError(f"size must be >= 1, got {size}")

    theta = np.deg2rad(rotation)
    c, s = np.cos(theta), np.sin(theta)
    matrix = np.array([[c, s], [-s, c]]) / scale
    h, w = img.shape[:2]
    centre_in = np.array([(h - 1) / 2.0, (w - 1) / 2.0]) + np.asarray(offset, dtype=np.float64)
    centre_out = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    shift = centre_in - matrix @ centre_out

    def warp(plane):
        out = ndimage.affine_transform(plane, matrix, offset=shift,
                                       output_shape=(size, size),
                                       order=1, mode="nearest")
        return np.clip(out, 0.0, 1.0)

    if img.ndim == 2:
        return warp(img)
    return np.stack([warp(img[..., k]) for k in range(img.shape[2])], axis=-1)


def sample_affine_params(rng, in_shape, size, scale_range=(0.8, 1.5),
                         rotation_range=(0.0, 360.0), max_offset_frac=0.25):
    """Draw ``(scale, rotation, offset)`` for :func:`affine_crop` from ``rng``."""
    scale = float(rng.uniform(*scale_range))
    rotation = float(rng.uniform(*rotation_range))
    h, w = in_shape[:2]
    dy = float(rng.uniform(-max_offset_frac, max_offset_frac) * h)
    dx = float(rng.uniform(-max_offset_frac, max_offset_frac) * w)
    return {"scale": scale, "rotation": rotation, "offset": [dy, dx], "size": int(size)}


def block_mean(field, factor):
    """Mean over non-overlapping ``factor x factor`` windows.

    Dimensions that are not multiples of ``factor`` are padded by replication
    first. Works on ``(H, W)`` and ``(H, W, C)`` arrays.
    """
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape[:2]
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (field.ndim - 2)
        field = np.pad(field, pad, mode="edge")
    H, W = field.shape[:2]
    shaped = field.reshape(H // factor, factor, W // factor, factor, *field.shape[2:])
    return shaped.mean(axis=(1, 3))
