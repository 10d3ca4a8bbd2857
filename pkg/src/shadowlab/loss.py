"""Training losses: noise-matching L1, feature-pyramid distance, weighted total.

The feature extractor is a frozen, fixed-seed convolution pyramid with five
slices at strides 1, 2, 4, 8 and 16. It stands in for a pretrained
classification backbone; any ``nn.Module`` returning five feature maps can be
passed instead.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import InvalidInputError
from .validation import check_same_shape

N_SLICES = 5
MIN_SIZE = 32
DEFAULT_WEIGHTS = (0.1, 0.1, 0.2, 0.3, 0.3)


@dataclass(frozen=True)
class FeatureWeights:
    weights: tuple = DEFAULT_WEIGHTS

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != N_SLICES:
            raise InvalidInputError(f"need {N_SLICES} slice weights, got {len(w)}")
        if any(v < 0 for v in w) or sum(w) <= 0:
            raise InvalidInputError(f"weights must be non-negative with positive sum, got {w}")
        object.__setattr__(self, "weights", w)

    @property
    def normalized(self):
        total = sum(self.weights)
        return tuple(v / total for v in self.weights)


class PyramidExtractor(nn.Module):
    """Five conv + ReLU slices separated by 2x2 max-pooling (ceil mode).

    Weights are drawn once from ``seed`` and frozen.
    """

    def __init__(self, seed=0, widths=(8, 16, 32, 32, 32), in_channels=3):
        super().__init__()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        c_in = in_channels
        for c_out in widths:
            conv = nn.Conv2d(c_in, c_out, 3, padding=1, dtype=torch.float64)
            with torch.no_grad():
                std = np.sqrt(2.0 / (9 * c_in))
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen,
                                              dtype=torch.float64) * std)
                conv.bias.zero_()
            conv.requires_grad_(False)
            self.convs.append(conv)
            c_in = c_out

    def forward(self, x):
        slices = []
        h = x
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = F.max_pool2d(h, 2, ceil_mode=True)
            h = F.relu(conv(h))
            slices.append(h)
        return slices


_EXTRACTORS = {}


def default_extractor(seed=0):
    if seed not in _EXTRACTORS:
        _EXTRACTORS[seed] = PyramidExtractor(seed).eval()
    return _EXTRACTORS[seed]


def to_tensor(img):
    """``(H, W, 3)`` or ``(N, H, W, 3)`` array to an ``(N, 3, H, W)`` tensor."""
    if isinstance(img, torch.Tensor):
        return img
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def extract_pyramid(img, extractor=None):
    """Five feature maps of ``img``, shallowest first."""
    x = to_tensor(img)
    if min(x.shape[-2:]) < MIN_SIZE:
        raise InvalidInputError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got "
                                f"{tuple(x.shape[-2:])}")
    extractor = extractor or default_extractor()
    return extractor(x)


def diff_loss(eps_pred, eps_true, weight=None):
    """Mean absolute difference between predicted and true noise.

    ``weight`` (broadcastable to the noise shape) scales each element's error
    before averaging.
    """
    if isinstance(eps_pred, torch.Tensor):
        if eps_pred.shape != eps_true.shape:
            raise InvalidInputError(f"shape mismatch {tuple(eps_pred.shape)} vs "
                                    f"{tuple(eps_true.shape)}")
        err = (eps_pred - eps_true).abs()
        if weight is not None:
            err = err * weight
        return err.mean()
    check_same_shape(eps_pred, eps_true, ("eps_pred", "eps_true"))
    err = np.abs(np.asarray(eps_pred) - np.asarray(eps_true))
    if weight is not None:
        err = err * np.asarray(weight)
    return float(np.mean(err))


def slice_distances(img_a, img_b, extractor=None, sample_weight=None):
    """Mean squared difference of each pyramid slice.

    With ``sample_weight`` (one value per image) each slice distance is the
    weighted mean of the per-image distances.
    """
    a = to_tensor(img_a)
    b = to_tensor(img_b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    sa = extract_pyramid(a, extractor)
    sb = extract_pyramid(b, extractor)
    if sample_weight is None:
        return [((x - y) ** 2).mean() for x, y in zip(sa, sb)]
    w = torch.as_tensor(sample_weight, dtype=a.dtype)
    if w.shape != (a.shape[0],):
        raise InvalidInputError(f"need {a.shape[0]} sample weights, got {tuple(w.shape)}")
    return [(((x - y) ** 2).mean(dim=(1, 2, 3)) * w).sum() / w.sum().clamp_min(1e-300)
            for x, y in zip(sa, sb)]


def fea_loss(img_a, img_b, weights=FeatureWeights(), extractor=None, sample_weight=None):
    """Weighted sum of per-slice mean squared feature differences.

    Returns a tensor when either input is a tensor, otherwise a float.
    """
    dists = slice_distances(img_a, img_b, extractor, sample_weight)
    total = sum(w * d for w, d in zip(weights.normalized, dists))
    if isinstance(img_a, torch.Tensor) or isinstance(img_b, torch.Tensor):
        return total
    return float(total)


def total_loss(l_diff, l_fea, lam=0.5):
    """``lam * l_diff + (1 - lam) * l_fea``."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * l_diff + (1.0 - lam) * l_fea
