"""Pixel-level reconstruction metrics (PSNR, SSIM) and segmentation overlap
(Dice).

All images are expected in [0, 1], so PSNR uses a fixed data range of 1.0
(comparable across conditions) and SSIM uses the standard stability
constants for unit range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .util import check_unit_range, same_shape

PSNR_CAP_DB = 200.0  # returned for zero MSE; keeps aggregation finite
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01) ** 2
SSIM_C2 = (0.03) ** 2


@dataclass(frozen=True)
class QualityScore:
    """One metric value for one subject under one condition tag."""

    metric: str  # psnr_db | ssim | dice
    value: float
    subject_id: str
    condition: str


def mse(reference: np.ndarray, test: np.ndarray) -> float:
    """Mean squared error between two same-shape arrays."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with fixed data range 1.0.

    Identical inputs return the cap value (200 dB) rather than infinity.
    Because the range is fixed, psnr(x, y) == psnr(y, x).
    """
    ref = check_unit_range(reference, "reference")
    tst = check_unit_range(test, "test")
    same_shape(ref, tst)
    err = mse(ref, tst)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / err)), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    kern = np.outer(g, g)
    return kern / kern.sum()


def ssim(reference: np.ndarray, test: np.ndarray) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window
    (sigma 1.5) and constants C1=0.01^2, C2=0.03^2 for unit data range.

    Local statistics are computed by valid-mode convolution, so the image
    must be at least window-sized. Identical inputs return exactly 1.0.
    """
    ref = check_unit_range(reference, "reference")
    tst = check_unit_range(test, "test")
    same_shape(ref, tst)
    if min(ref.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {ref.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    mu_x = convolve2d(ref, kern, mode="valid")
    mu_y = convolve2d(tst, kern, mode="valid")
    xx = convolve2d(ref * ref, kern, mode="valid")
    yy = convolve2d(tst * tst, kern, mode="valid")
    xy = convolve2d(ref * tst, kern, mode="valid")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def dice(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Dice overlap 2|A∩B| / (|A| + |B|) for binary masks.

    Two empty masks score 1.0: an empty prediction on a slice with nothing
    to segment is correct and must not be penalized.
    """
    a = _check_binary(mask_a, "mask_a")
    b = _check_binary(mask_b, "mask_b")
    same_shape(a, b, "masks")
    size_a = int(a.sum())
    size_b = int(b.sum())
    if size_a == 0 and size_b == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / (size_a + size_b)


def _check_binary(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    vals = np.asarray(arr, dtype=np.float64)
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ValueError(f"{name} must be binary (values in {{0, 1}})")
    return vals.astype(bool)


def mean_by_patient(per_slice: list[tuple[str, float]]) -> float:
    """Mean over slices per patient, then mean over patients."""
    by_patient: dict[str, list[float]] = {}
    for sid, value in per_slice:
        by_patient.setdefault(sid, []).append(value)
    if not by_patient:
        raise ValueError("no scores supplied")
    return float(np.mean([np.mean(v) for v in by_patient.values()]))
