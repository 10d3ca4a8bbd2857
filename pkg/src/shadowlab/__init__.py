"""Document shadow removal laboratory.

Soft-mask estimation, synthetic shadow datasets, a mask-modulated
mean-reverting SDE, a small latent diffusion model and image metrics.
"""

from .exceptions import DatasetIOError, InvalidInputError, NumericalDivergenceError
from .imagecore import FilterConfig
from .model import ModelConfig, ShadowDiffusion, ShadowRemover, TrainConfig
from .sde import MaskModulation, SdeSchedule
from .ssgm import SoftMaskGenerator, SsgmConfig, generate_soft_mask
from .synth import ShadowColor, SynthConfig, composite_shadow

__version__ = "0.1.0"

__all__ = [
    "DatasetIOError", "InvalidInputError", "NumericalDivergenceError",
    "FilterConfig", "ModelConfig", "ShadowDiffusion", "ShadowRemover", "TrainConfig",
    "MaskModulation", "SdeSchedule", "SoftMaskGenerator", "SsgmConfig",
    "generate_soft_mask", "ShadowColor", "SynthConfig", "composite_shadow",
]
