"""Uncertainty-sampling query strategies and top-N batch selection.

All strategies share one convention: higher score = more informative.
Margin is stored as 1 - (p1 - p2) so a single selection routine serves
every strategy.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .errors import InsufficientPoolError, ValidationError
from .validation import check_prob_vector, check_sigmoid_output

ENTROPY_CLAMP = 1e-12


class StrategyKind(enum.Enum):
    """Query strategy selector. RANDOM is a control baseline, not an
    uncertainty measure."""

    LEAST_CONFIDENCE = "least-confidence"
    MARGIN = "margin"
    ENTROPY = "entropy"
    RANDOM = "random"

    @classmethod
    def from_string(cls, name: str) -> "StrategyKind":
        for kind in cls:
            if kind.value == name or kind.name.lower() == name.lower():
                return kind
        raise ValidationError(f"unknown strategy {name!r}; expected one of "
                              f"{[k.value for k in cls]}")


def score_least_confidence(p: Sequence[float]) -> float:
    """1 minus the top predicted class probability; range [0, 1 - 1/K]."""
    arr = check_prob_vector(p)
    return float(1.0 - arr.max())


def score_margin(p: Sequence[float]) -> float:
    """1 minus the gap between the two most probable classes; range [0, 1]."""
    arr = check_prob_vector(p)
    top2 = np.sort(arr)[-2:]
    return float(1.0 - (top2[1] - top2[0]))


def score_entropy(p: Sequence[float]) -> float:
    """Shannon entropy in nats; range [0, ln K]. Zero entries use 0*log0 = 0."""
    arr = check_prob_vector(p)
    clamped = np.clip(arr, ENTROPY_CLAMP, 1.0)
    return float(-(arr * np.log(clamped)).sum())


_SCORERS = {
    StrategyKind.LEAST_CONFIDENCE: score_least_confidence,
    StrategyKind.MARGIN: score_margin,
    StrategyKind.ENTROPY: score_entropy,
}


def score(strategy: StrategyKind, p: Sequence[float]) -> float:
    """Dispatch to a scorer. RANDOM has no score function; the caller
    draws seeded random scores instead."""
    try:
        return _SCORERS[strategy](p)
    except KeyError:
        raise ValidationError(f"{strategy} has no probability-based scorer") from None


def binary_prob_vector(sigmoid_output: float) -> np.ndarray:
    """Adapt a single sigmoid output to a 2-class probability vector.

    Index 0 is the defect class by convention, so the sigmoid output is
    read as P(defect).
    """
    p = check_sigmoid_output(sigmoid_output)
    return np.array([p, 1.0 - p], dtype=np.float64)


def select_batch(scores, n: int) -> list:
    """Pick the n sample ids with the highest scores.

    scores is a sequence of (sample_id, score) pairs. Output is sorted by
    descending score, ties broken by ascending sample id; fully
    deterministic.
    """
    pairs = list(scores)
    if n < 1:
        raise ValidationError(f"batch size must be >= 1, got {n}")
    if n > len(pairs):
        raise InsufficientPoolError(
            f"requested {n} samples from a pool of {len(pairs)}")
    for sample_id, value in pairs:
        if not math.isfinite(value):
            raise ValidationError(f"non-finite score for sample {sample_id!r}")
    ranked = sorted(pairs, key=lambda item: (-item[1], item[0]))
    return [sample_id for sample_id, _ in ranked[:n]]
