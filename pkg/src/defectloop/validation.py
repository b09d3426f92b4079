"""Input validation helpers used throughout the package."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

PROB_SUM_TOL = 1e-6
SIGMOID_RANGE_TOL = 1e-9


def check_prob_vector(p) -> np.ndarray:
    """Validate a class-probability vector and return it as float64.

    Requires length >= 2, every entry in [0, 1], and entries summing to 1
    within PROB_SUM_TOL.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValidationError(f"probability vector must be 1-D with K >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("probability vector contains non-finite entries")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValidationError(f"probability entries must lie in [0, 1], got {arr}")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"probabilities sum to {total}, expected 1 within {PROB_SUM_TOL}")
    return arr


def check_finite(arr, name: str = "array") -> np.ndarray:
    """Return arr as a float64 ndarray, rejecting NaN/Inf entries."""
    out = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite entries")
    return out


def check_feature_map(fm) -> np.ndarray:
    """Validate an H x W x C activation tensor."""
    arr = np.asarray(fm, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"feature map must be 3-D (H, W, C), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValidationError(f"feature map dimensions must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature map contains non-finite entries")
    return arr


def check_image(img) -> np.ndarray:
    """Validate a 2-D grayscale pixel grid, returned as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValidationError(f"image must be a 2-D grayscale grid, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and (arr.min() < 0 or arr.max() > 255):
            raise ValidationError("float image values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def check_sigmoid_output(value: float) -> float:
    """Validate a sigmoid output, tolerating 1e-9 of numeric overshoot."""
    v = float(value)
    if not np.isfinite(v) or v < -SIGMOID_RANGE_TOL or v > 1.0 + SIGMOID_RANGE_TOL:
        raise ValidationError(f"sigmoid output must lie in [0, 1], got {v}")
    return min(max(v, 0.0), 1.0)
