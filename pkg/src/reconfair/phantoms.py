"""Test phantoms: the classic head phantom and seeded random smooth phantoms
for degradation benchmarks."""

from __future__ import annotations

import numpy as np

# (value, semi-axis a, semi-axis b, x0, y0, rotation degrees) on [-1, 1]^2,
# contrast-enhanced variant with pixel values in [0, 1]
_HEAD_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def shepp_logan(n: int) -> np.ndarray:
    """Shepp-Logan head phantom, n x n, values in [0, 1]."""
    coords = np.linspace(-1.0, 1.0, n)
    x, y = np.meshgrid(coords, -coords)  # row 0 = top
    img = np.zeros((n, n))
    for value, a, b, x0, y0, phi_deg in _HEAD_ELLIPSES:
        phi = np.deg2rad(phi_deg)
        xr = (x - x0) * np.cos(phi) + (y - y0) * np.sin(phi)
        yr = -(x - x0) * np.sin(phi) + (y - y0) * np.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def random_phantom(n: int, rng: np.random.Generator, n_blobs: int = 6) -> np.ndarray:
    """Smooth random phantom: anisotropic Gaussian blobs on a soft disk
    support, min-max normalized to [0, 1]."""
    coords = np.linspace(-1.0, 1.0, n)
    x, y = np.meshgrid(coords, coords)
    r = np.hypot(x, y)
    img = 0.3 * np.clip((0.92 - r) / 0.1, 0.0, 1.0)  # soft outer support
    for _ in range(n_blobs):
        amp = rng.uniform(0.2, 1.0)
        cx, cy = rng.uniform(-0.55, 0.55, size=2)
        sx, sy = rng.uniform(0.06, 0.35, size=2)
        phi = rng.uniform(0.0, np.pi)
        xr = (x - cx) * np.cos(phi) + (y - cy) * np.sin(phi)
        yr = -(x - cx) * np.sin(phi) + (y - cy) * np.cos(phi)
        img += amp * np.exp(-0.5 * ((xr / sx) ** 2 + (yr / sy) ** 2))
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return img


def phantom_corpus(count: int, n: int, seed: int) -> dict[str, np.ndarray]:
    """Seeded batch of random phantoms keyed ``phantom_000``, ``phantom_001``..."""
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        out[f"phantom_{i:03d}"] = random_phantom(n, rng)
    return out


def disk_image(n: int, radius: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Uniform disk of value 1 on a zero background (pixel units)."""
    cy, cx = center if center is not None else ((n - 1) / 2.0, (n - 1) / 2.0)
    yy, xx = np.mgrid[0:n, 0:n]
    return (np.hypot(yy - cy, xx - cx) <= radius).astype(np.float64)
