"""Shadow soft-mask generation from a single document photograph.

The mask grades shadow darkness per pixel: 0 is unshadowed paper and 1 the
darkest shadow core. The pipeline is deliberately heuristic:

    gray -> dilate -> median -> dark-pixel mean -> normalise -> median

Dilation (a max filter) erases dark text strokes narrower than its window,
so that only the slowly varying illumination survives into the background
estimate.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import imagecore
from .imagecore import FilterConfig
from .validation import check_image, check_scalar


@dataclass(frozen=True)
class SsgmConfig:
    dark_fraction: float = 0.1
    filters: FilterConfig = field(default_factory=FilterConfig)
    invert_to_convention: bool = True
    degenerate_eps: float = 0.02

    def __post_init__(self):
        check_scalar(self.dark_fraction, "dark_fraction", 0.0, 1.0,
                     include_min=False, include_max=False)
        check_scalar(self.degenerate_eps, "degenerate_eps", 0.0, include_min=False)


def dark_pixel_mean(bg, a):
    """Mean of the ``round(a*w*h)`` darkest samples (at least one)."""
    bg = check_image(bg, channels=1, name="bg")
    check_scalar(a, "a", 0.0, 1.0, include_min=False, include_max=False)
    flat = np.sort(bg, axis=None)
    m = max(1, int(np.floor(a * flat.size + 0.5)))
    return float(flat[:m].mean())


def background_estimate(shadow_img, filters=FilterConfig()):
    """Text-free illumination estimate: luma, then dilation, then median."""
    gray = imagecore.to_gray(shadow_img)
    dilated = imagecore.dilate(gray, filters.dilate_radius)
    return imagecore.median_filter(dilated, filters.median_radius_pre)


def raw_mask_field(bg, p_mean):
    """Unclamped ``(bg - p_mean) / (p_max - p_mean)``; ``None`` if degenerate."""
    p_max = float(bg.max())
    span = p_max - p_mean
    if span <= 0:
        return None
    return (bg - p_mean) / span


def normalize_mask(bg, p_mean, cfg=SsgmConfig()):
    """Turn a background estimate into a mask in ``[0, 1]``.

    Dark pixels are mapped to 1 when ``cfg.invert_to_convention`` is set
    (the default); otherwise the raw normalised brightness is returned. A
    background whose dynamic range is below ``cfg.degenerate_eps`` carries
    no detectable shadow and yields the all-zero mask.
    """
    bg = check_image(bg, channels=1, name="bg")
    if float(bg.max()) - p_mean < cfg.degenerate_eps:
        return np.zeros_like(bg)
    raw = np.clip(raw_mask_field(bg, p_mean), 0.0, 1.0)
    if cfg.invert_to_convention:
        return 1.0 - raw
    return raw


def generate_soft_mask(shadow_img, cfg=SsgmConfig()):
    """Estimate the soft shadow mask of an RGB image (same H x W)."""
    bg = background_estimate(shadow_img, cfg.filters)
    p_mean = dark_pixel_mean(bg, cfg.dark_fraction)
    mask = normalize_mask(bg, p_mean, cfg)
    mask = imagecore.median_filter(mask, cfg.filters.median_radius_post)
    return np.clip(mask, 0.0, 1.0)


class SoftMaskGenerator(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping RGB shadow images to soft masks.

    Parameters mirror :class:`SsgmConfig` and :class:`FilterConfig` so the
    generator can be cloned, grid-searched and dropped into a pipeline.

    Examples
    --------
    >>> import numpy as np
    >>> page = np.ones((32, 32, 3))
    >>> SoftMaskGenerator().fit_transform([page]).shape
    (1, 32, 32)
    """

    def __init__(self, dark_fraction=0.1, dilate_radius=4, median_radius_pre=5,
                 median_radius_post=3, invert_to_convention=True,
                 degenerate_eps=0.02):
        self.dark_fraction = dark_fraction
        self.dilate_radius = dilate_radius
        self.median_radius_pre = median_radius_pre
        self.median_radius_post = median_radius_post
        self.invert_to_convention = invert_to_convention
        self.degenerate_eps = degenerate_eps

    def _config(self):
        return SsgmConfig(
            dark_fraction=self.dark_fraction,
            filters=FilterConfig(self.dilate_radius, self.median_radius_pre,
                                 self.median_radius_post),
            invert_to_convention=self.invert_to_convention,
            degenerate_eps=self.degenerate_eps,
        )

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self._config()
        return np.stack([generate_soft_mask(img, cfg) for img in X])
