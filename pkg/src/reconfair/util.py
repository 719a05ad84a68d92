"""Shared helpers: stable seed derivation and input validation."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *tokens: str) -> int:
    """Derive a child seed from a master seed and a tuple of string tokens.

    The derivation is a stable content hash, so results do not depend on the
    order in which seeds are requested. Identical (master_seed, tokens) always
    yield the identical child seed, across processes and platforms.
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("utf-8"))
    for tok in tokens:
        h.update(b"\x1f")
        h.update(str(tok).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(master_seed: int, *tokens: str) -> np.random.Generator:
    """Seeded generator for a named sub-task (see :func:`derive_seed`)."""
    return np.random.default_rng(derive_seed(master_seed, *tokens))


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a 2D image array with finite values; returns float64 view."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_unit_range(img: np.ndarray, name: str = "image", tol: float = 1e-9) -> np.ndarray:
    """Validate a 2D image with all values in [0, 1] (within tol)."""
    arr = check_image(img, name)
    if arr.min() < -tol or arr.max() > 1.0 + tol:
        raise ValueError(
            f"{name} values outside [0, 1]: min={arr.min():.6g}, max={arr.max():.6g}"
        )
    return arr


def same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must share one shape: {a.shape} vs {b.shape}")
