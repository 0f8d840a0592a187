"""Consistency-curve fitting and the overhead-optimal width multiplier."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class FitError(ValueError):
    pass


class NonConformingPool(FitError):
    pass


@dataclass(frozen=True)
class ConsistencyFit:
    """consistency(alpha) ~= b - a / alpha, valid for a/b <= alpha <= 1."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise NonConformingPool(f"fit needs a > 0 and b > 0, got a={self.a:.6g}, b={self.b:.6g}")

    @property
    def valid_range(self) -> tuple[float, float]:
        return self.a / self.b, 1.0

    def __call__(self, alpha):
        return -self.a / np.asarray(alpha, dtype=np.float64) + self.b

    def overhead(self, alpha):
        """Predicted computational overhead alpha^2 + 1 - f(alpha)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        return alpha**2 + 1.0 + self.a / alpha - self.b


def fit_consistency(samples: Sequence) -> ConsistencyFit:
    """Least squares of consistency against 1/alpha.

    ``samples`` are objects with ``alpha`` and ``consistency`` attributes or
    ``(alpha, consistency)`` pairs.
    """
    pts = [(s.alpha, s.consistency) if hasattr(s, "alpha") else tuple(s) for s in samples]
    alpha = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    if len(alpha) < 2 or np.unique(alpha).size < 2:
        raise FitError("need at least two samples with distinct alpha")
    design = np.column_stack([np.ones_like(alpha), -1.0 / alpha])
    (b, a), *_ = np.linalg.lstsq(design, y, rcond=None)
    if a <= 0 or b <= 0:
        raise NonConformingPool(
            f"fitted a={a:.6g}, b={b:.6g}; consistency does not rise with alpha as b - a/alpha. "
            "Widen the alpha sweep (add smaller multipliers) or train the candidates longer."
        )
    return ConsistencyFit(float(a), float(b))


def optimal_alpha(fit: ConsistencyFit) -> tuple[float, float]:
    """Stationary point cbrt(a/2) of the overhead, clamped into the valid range.

    Returns ``(alpha, predicted overhead at alpha)``.
    """
    lo, hi = fit.valid_range
    alpha = float(np.clip(np.cbrt(fit.a / 2.0), lo, hi))
    return alpha, float(fit.overhead(alpha))

