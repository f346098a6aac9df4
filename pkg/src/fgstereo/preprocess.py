"""Homomorphic illumination correction."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class HomomorphicConfig:
    kernel_size: int = 21
    epsilon_log: float = 1e-6

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if not self.epsilon_log > 0:
            raise ValueError("epsilon_log must be positive")


def _normalize(out):
    lo, hi = float(out.min()), float(out.max())
    # a flat result carries no reflectance; keep it flat instead of amplifying rounding noise
    if hi - lo <= 1e-9 * max(abs(hi), 1.0):
        return np.full_like(out, 0.5)
    return (out - lo) / (hi - lo)


def homomorphic_correct(img, cfg=HomomorphicConfig()):
    """Remove slowly varying illumination from ``img``.

    The image is taken to the log domain, the local ``kernel_size`` box mean
    (replicate borders) is subtracted, and the exponentiated result is
    rescaled to [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    logimg = np.log(np.maximum(img, 0.0) + cfg.epsilon_log)
    low = ndimage.uniform_filter(logimg, size=cfg.kernel_size, mode="nearest")
    return _normalize(np.exp(logimg - low))
