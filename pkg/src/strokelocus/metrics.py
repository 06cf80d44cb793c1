"""Image-quality metrics and the pGAN loss terms as plain array functions.

Expectations in the loss definitions are realised as arithmetic means over
the supplied arrays; feature maps for the perceptual term are computed
elsewhere and passed in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from .errors import EmptyInput, ShapeMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise EmptyInput("empty arrays")
    return a, b


@dataclass(frozen=True)
class SlicePair:
    """One training example: source slice with its k neighbours stacked as channels."""

    source: np.ndarray
    target: np.ndarray
    generated: np.ndarray

    def __post_init__(self):
        if np.shape(self.target) != np.shape(self.generated):
            raise ShapeMismatch("target and generated slices differ in shape")

    @property
    def k(self) -> int:
        """Neighbourhood channel count (1 for a lone 2-D slice)."""
        src = np.asarray(self.source)
        return 1 if src.ndim == 2 else src.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    adversarial: float
    l1: float
    perceptual: float
    lambda_l1: float
    lambda_perc: float
    total: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def l1_loss(generated, target) -> float:
    """Mean absolute pixel difference."""
    g, t = _pair(generated, target)
    return float(np.mean(np.abs(t - g)))


def perceptual_loss(feat_generated, feat_target) -> float:
    """Mean absolute difference of precomputed feature maps."""
    g, t = _pair(feat_generated, feat_target)
    return float(np.mean(np.abs(t - g)))


def adversarial_loss(d_real, d_fake) -> float:
    """Least-squares conditional adversarial term, ``-E[(D_real-1)^2] - E[D_fake^2]``."""
    real = np.asarray(d_real, dtype=np.float64)
    fake = np.asarray(d_fake, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise EmptyInput("discriminator outputs must be non-empty")
    return float(0.0 - np.mean((real - 1.0) ** 2) - np.mean(fake**2))


def pgan_loss(
    d_real,
    d_fake,
    generated,
    target,
    feat_generated,
    feat_target,
    lambda_l1: float,
    lambda_perc: float,
) -> LossBreakdown:
    adv = adversarial_loss(d_real, d_fake)
    l1 = l1_loss(generated, target)
    perc = perceptual_loss(feat_generated, feat_target)
    total = adv + lambda_l1 * l1 + lambda_perc * perc
    return LossBreakdown(adv, l1, perc, float(lambda_l1), float(lambda_perc), float(total))


def psnr(reference, test, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    r, t = _pair(reference, test)
    mse = float(np.mean((r - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _local_mean(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(img, w, axis=0, mode="reflect")
    return correlate1d(out, w, axis=1, mode="reflect")


def ssim_map(reference, test, dynamic_range: float) -> np.ndarray:
    """Local SSIM over every full 11x11 window (border windows excluded)."""
    r, t = _pair(reference, test)
    if r.ndim != 2:
        raise ShapeMismatch(f"SSIM needs 2-D arrays, got {r.ndim}-D")
    if min(r.shape) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {r.shape}")
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    w = gaussian_window()
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mu_r, mu_t = _local_mean(r, w), _local_mean(t, w)
    var_r = _local_mean(r * r, w) - mu_r * mu_r
    var_t = _local_mean(t * t, w) - mu_t * mu_t
    cov = _local_mean(r * t, w) - mu_r * mu_t
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r * mu_r + mu_t * mu_t + c1) * (var_r + var_t + c2)
    pad = SSIM_WINDOW // 2
    return (num / den)[pad:-pad, pad:-pad]


def ssim(reference, test, dynamic_range: float) -> float:
    """Mean structural similarity (Gaussian window, sigma 1.5, K1=0.01, K2=0.03)."""
    return float(np.mean(ssim_map(reference, test, dynamic_range)))


def slicewise(reference, test, peak: float, dynamic_range: Optional[float] = None):
    """Per-axial-slice PSNR and SSIM for two 3-D arrays indexed [x, y, z]."""
    r, t = _pair(reference, test)
    if r.ndim != 3:
        raise ShapeMismatch("slice-wise metrics need 3-D volumes")
    dr = peak if dynamic_range is None else dynamic_range
    psnrs = [psnr(r[:, :, z], t[:, :, z], peak) for z in range(r.shape[2])]
    ssims = [ssim(r[:, :, z], t[:, :, z], dr) for z in range(r.shape[2])]
    return psnrs, ssims


def format_mean_std(name: str, values) -> str:
    """``NAME mean ± std`` with two decimals (population std over slices)."""
    v = np.asarray(values, dtype=np.float64)
    if np.all(np.isposinf(v)):
        return f"{name} inf ± 0.00"
    if np.any(np.isinf(v)):
        return f"{name} inf ± nan"
    return f"{name} {v.mean():.2f} ± {v.std():.2f}"
