"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import InvalidInputError


def check_image(img, channels=None, name="img", clip=False):
    """Validate an image and return it as a float64 array.

    Single-channel images are returned as ``(H, W)`` arrays (a trailing
    channel axis of length 1 is dropped); colour images as ``(H, W, 3)``.

    Parameters
    ----------
    img : array-like
        Candidate image with samples in ``[0, 1]``.
    channels : {None, 1, 3}
        Required channel count. ``None`` accepts either.
    name : str
        Argument name used in error messages.
    clip : bool
        If True, out-of-range samples are clipped instead of rejected.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise InvalidInputError(
            f"{name} must have shape (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be non-empty, got {arr.shape}")
    n_ch = 1 if arr.ndim == 2 else 3
    if channels is not None and n_ch != channels:
        raise InvalidInputError(
            f"{name} must have {channels} channel(s), got {n_ch}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite samples")
    if clip:
        arr = np.clip(arr, 0.0, 1.0)
    elif arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidInputError(
            f"{name} samples must lie in [0, 1], got range "
            f"[{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(
            f"{names[0]} and {names[1]} must have the same shape, "
            f"got {a.shape} and {b.shape}")


def check_scalar(x, name, min_val=None, max_val=None,
                 include_min=True, include_max=True, target_type=numbers.Real):
    """Check a scalar parameter against bounds and return it."""
    if isinstance(x, bool) or not isinstance(x, target_type):
        raise InvalidInputError(f"{name} must be {target_type.__name__}, got {type(x).__name__}")
    if min_val is not None:
        bad = x < min_val if include_min else x <= min_val
        if bad:
            op = ">=" if include_min else ">"
            raise InvalidInputError(f"{name} must be {op} {min_val}, got {x}")
    if max_val is not None:
        bad = x > max_val if include_max else x >= max_val
        if bad:
            op = "<=" if include_max else "<"
            raise InvalidInputError(f"{name} must be {op} {max_val}, got {x}")
    return x


def check_radius(radius, name="radius"):
    return check_scalar(radius, name, min_val=0, target_type=numbers.Integral)
