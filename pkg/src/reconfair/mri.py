"""Accelerated-MRI simulation: synthetic k-space from magnitude images
(zero phase), golden-angle radial undersampling masks, and zero-filled
reconstruction.

Acceleration R is defined through the retained sample fraction: a legal mask
keeps a fraction of k-space within 10% of 1/R, and always keeps the DC
sample. Spoke count is found by search against that target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import check_image, derive_seed

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0)) / 2.0  # ~111.246 degrees
FRACTION_TOLERANCE = 0.1  # |retained - 1/R| <= 0.1 * (1/R)


@dataclass
class KSpaceGrid:
    """Complex 2D Fourier grid of an image, DC sample at the grid center."""

    data: np.ndarray
    dc_centered: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


@dataclass
class RadialMask:
    """Binary keep-mask rasterized from full-diameter spokes through DC."""

    keep: np.ndarray
    acceleration: float
    spoke_count: int
    retained_fraction: float

    def __post_init__(self) -> None:
        keep = np.asarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        frac = keep.sum() / keep.size
        if abs(frac - self.retained_fraction) > 1e-12:
            raise ValueError("retained_fraction does not match mask contents")
        target = 1.0 / self.acceleration
        if abs(frac - target) > FRACTION_TOLERANCE * target + 1e-12:
            raise ValueError(
                f"retained fraction {frac:.4f} misses 1/R={target:.4f} "
                f"beyond the {FRACTION_TOLERANCE:.0%} tolerance"
            )
        h, w = keep.shape
        if not keep[h // 2, w // 2]:
            raise ValueError("mask must keep the DC (center) sample")


def image_to_kspace(img: np.ndarray) -> KSpaceGrid:
    """Forward 2D DFT of a real image (zero phase), DC centered.

    Unnormalized convention: a constant image of value c on an NxN grid puts
    all energy at DC with magnitude c*N^2.
    """
    arr = check_image(img)
    k = np.fft.fftshift(np.fft.fft2(arr))
    return KSpaceGrid(data=k, dc_centered=True)


def kspace_to_image(k: KSpaceGrid) -> np.ndarray:
    """Inverse DFT back to image space; complex output, caller takes parts."""
    if not k.dc_centered:
        raise ValueError("expected a DC-centered grid")
    if not np.all(np.isfinite(k.data.real)) or not np.all(np.isfinite(k.data.imag)):
        raise ValueError("k-space contains non-finite entries")
    return np.fft.ifft2(np.fft.ifftshift(k.data))


def make_radial_mask(
    shape: tuple[int, int], acceleration: float, seed: int
) -> RadialMask:
    """Golden-angle radial keep-mask hitting the 1/R sample-fraction target.

    Spokes are full-diameter lines through the DC sample, rasterized with
    nearest-neighbor rounding at half-pixel steps. The spoke count is searched
    so the retained fraction lands within 10% of 1/R (adding a spoke never
    removes samples, so the fraction is monotone in spoke count). The seed
    only rotates the starting spoke angle; identical (shape, acceleration,
    seed) produce a bit-identical mask.
    """
    if acceleration < 1.0:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    h, w = shape
    if h < 4 or w < 4:
        raise ValueError(f"grid {shape} too small for radial masking")
    if acceleration == 1.0:
        return RadialMask(
            keep=np.ones(shape, dtype=bool),
            acceleration=1.0,
            spoke_count=0,
            retained_fraction=1.0,
        )

    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, np.pi)
    target = 1.0 / acceleration
    total = h * w

    keep = np.zeros(shape, dtype=bool)
    keep[h // 2, w // 2] = True  # DC always kept
    best_err = abs(keep.sum() / total - target)
    best_count = 0
    best_keep = keep.copy()

    max_spokes = 64 * max(h, w)  # angle set is dense; bail out eventually
    count = 0
    while count < max_spokes:
        angle = (start + count * GOLDEN_ANGLE) % np.pi
        _rasterize_spoke(keep, angle)
        count += 1
        frac = keep.sum() / total
        err = abs(frac - target)
        if err < best_err:
            best_err = err
            best_count = count
            best_keep = keep.copy()
        if frac >= target:
            break

    frac = best_keep.sum() / total
    if abs(frac - target) > FRACTION_TOLERANCE * target:
        raise ValueError(
            f"shape {shape} cannot honor acceleration {acceleration}: "
            f"closest fraction {frac:.4f} vs target {target:.4f}"
        )
    return RadialMask(
        keep=best_keep,
        acceleration=float(acceleration),
        spoke_count=best_count,
        retained_fraction=float(frac),
    )


def _rasterize_spoke(keep: np.ndarray, angle: float) -> None:
    """Mark nearest-neighbor samples of a full-diameter line through DC."""
    h, w = keep.shape
    cy, cx = h // 2, w // 2
    r_max = np.hypot(h, w) / 2.0
    t = np.arange(-r_max, r_max + 0.5, 0.5)
    rows = np.rint(cy + t * np.sin(angle)).astype(int)
    cols = np.rint(cx + t * np.cos(angle)).astype(int)
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    keep[rows[ok], cols[ok]] = True


def undersample(k: KSpaceGrid, mask: RadialMask) -> KSpaceGrid:
    """Zero out k-space samples outside the mask (elementwise product)."""
    if k.data.shape != mask.keep.shape:
        raise ValueError(f"shape mismatch: k {k.data.shape} vs mask {mask.keep.shape}")
    return KSpaceGrid(data=np.where(mask.keep, k.data, 0.0), dc_centered=k.dc_centered)


@dataclass
class ZeroFillRecon:
    """Zero-filled reconstruction plus the discarded imaginary residue."""

    image: np.ndarray
    imag_residue: float


def zero_fill_reconstruct(k: KSpaceGrid) -> ZeroFillRecon:
    """Real part of the inverse DFT, clamped to [0, 1].

    The magnitude of the discarded imaginary part is reported as a
    diagnostic (it is ~0 for unmasked zero-phase grids and grows with
    asymmetric undersampling).
    """
    complex_img = kspace_to_image(k)
    residue = float(np.max(np.abs(complex_img.imag)))
    return ZeroFillRecon(image=np.clip(complex_img.real, 0.0, 1.0), imag_residue=residue)


def degrade_mri(
    img: np.ndarray, acceleration: float, seed: int
) -> tuple[np.ndarray, RadialMask]:
    """Full degrade path for one image: FFT, radial mask, zero-fill."""
    mask = make_radial_mask(np.asarray(img).shape, acceleration, seed)
    masked = undersample(image_to_kspace(img), mask)
    return zero_fill_reconstruct(masked).image, mask


def degrade_mri_batch(
    images: dict[str, np.ndarray], acceleration: float, master_seed: int
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Degrade a batch with per-image seeds derived from a master seed.

    Seeds depend only on (master_seed, image id, acceleration), so results
    are independent of iteration order. Returns degraded images and the
    retained fraction per image.
    """
    out: dict[str, np.ndarray] = {}
    fractions: dict[str, float] = {}
    for img_id in sorted(images):
        seed = derive_seed(master_seed, "mri", img_id, f"accel={acceleration:g}")
        out[img_id], mask = degrade_mri(images[img_id], acceleration, seed)
        fractions[img_id] = mask.retained_fraction
    return out, fractions
