"""Quantile machinery on the extended real line.

Two kinds of quantiles drive every prediction-set construction in this
package:

* inflated order-statistic quantiles of a finite sample (``quant_plus``,
  ``quant_minus``), which index into the sorted sample at position
  ``ceil((1 - alpha) * (n + 1))`` / ``floor(alpha * (n + 1))`` and overflow
  to ``+inf`` / ``-inf`` instead of raising;
* left and right quantiles of finitely supported distributions
  (``DiscreteDistribution``, ``left_quantile``, ``right_quantile``) whose
  atoms may sit at ``+-inf``.

All functions treat ``float('inf')`` and ``float('-inf')`` as ordinary
values, so downstream code can represent "the whole line" without special
cases.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiscreteDistribution",
    "left_quantile",
    "mixture_quantile_rows",
    "quant_minus",
    "quant_plus",
    "right_quantile",
]

# weights of a distribution must sum to 1 within this slack
_WEIGHT_TOL = 1e-9


def _check_level(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"level must lie strictly in (0, 1), got {alpha!r}")


def _as_sample(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a nonempty one-dimensional collection")
    if np.isnan(v).any():
        raise ValueError("sample values must not be NaN")
    return v


def quant_plus(values, alpha: float) -> float:
    """Upper sample quantile inflated by one phantom observation.

    Returns the ``ceil((1 - alpha) * (n + 1))``-th smallest of the ``n``
    values, or ``+inf`` when that index exceeds ``n``.

    Parameters
    ----------
    values : array-like of shape (n,)
        Sample values on the extended reals (NaN rejected), in any order.
    alpha : float in (0, 1)
        Tail mass; smaller ``alpha`` moves the quantile up.
    """
    v = _as_sample(values)
    _check_level(alpha)
    # exact rational index: a float product can round across an integer
    k = math.ceil((1 - Fraction(alpha)) * (v.size + 1))
    if k > v.size:
        return math.inf
    return float(np.sort(v)[k - 1])


def quant_minus(values, alpha: float) -> float:
    """Lower sample quantile, the mirror image of :func:`quant_plus`.

    Returns the ``floor(alpha * (n + 1))``-th smallest value, or ``-inf``
    when the index is zero.  Satisfies
    ``quant_minus(v, a) == -quant_plus(-v, a)`` exactly.
    """
    v = _as_sample(values)
    _check_level(alpha)
    k = math.floor(Fraction(alpha) * (v.size + 1))
    if k < 1:
        return -math.inf
    return float(np.sort(v)[k - 1])


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution on the extended reals.

    Atom locations may include ``+-inf``; duplicate locations are allowed
    and act additively.  Weights must be nonnegative and sum to 1 within
    1e-9.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        locs = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if locs.ndim != 1 or locs.size == 0:
            raise ValueError("locations must be a nonempty one-dimensional array")
        if w.shape != locs.shape:
            raise ValueError("weights must match locations in shape")
        if np.isnan(locs).any():
            raise ValueError("atom locations must not be NaN")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    def left_quantile(self, alpha: float) -> float:
        return left_quantile(self, alpha)

    def right_quantile(self, alpha: float) -> float:
        return right_quantile(self, alpha)


def _cdf_scan(locations: np.ndarray, weights: np.ndarray, level: float) -> float:
    order = np.argsort(locations, kind="stable")
    locs = locations[order]
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, level, side="left"))
    # float cumsums can top out a hair under 1; the last atom is then the answer
    if idx >= locs.size:
        idx = locs.size - 1
    return float(locs[idx])


def left_quantile(dist: DiscreteDistribution, alpha: float) -> float:
    """Smallest location t with ``P(Z <= t) >= alpha``."""
    _check_level(alpha)
    return _cdf_scan(dist.locations, dist.weights, alpha)


def right_quantile(dist: DiscreteDistribution, alpha: float) -> float:
    """Supremum of the locations t with ``P(Z <= t) < alpha``.

    For finitely supported distributions this supremum coincides with the
    first atom at which the CDF reaches or exceeds ``alpha``, so the scan is
    shared with :func:`left_quantile`; the two names document which side of
    a boundary a construction is meant to favor.
    """
    _check_level(alpha)
    return _cdf_scan(dist.locations, dist.weights, alpha)


def mixture_quantile_rows(loc_rows: np.ndarray, weights: np.ndarray, level: float) -> np.ndarray:
    """Row-wise left quantile of discrete mixtures sharing one weight vector.

    ``loc_rows`` has one row of atom locations per query point; ``weights``
    is the common weight vector.  Equivalent to calling
    ``left_quantile(DiscreteDistribution(row, weights), level)`` per row,
    vectorized for the hot evaluation paths.
    """
    _check_level(level)
    loc_rows = np.asarray(loc_rows, dtype=float)
    if loc_rows.ndim != 2:
        raise ValueError("loc_rows must be two-dimensional")
    order = np.argsort(loc_rows, axis=1, kind="stable")
    locs = np.take_along_axis(loc_rows, order, axis=1)
    w = np.broadcast_to(np.asarray(weights, dtype=float), loc_rows.shape)
    cum = np.cumsum(np.take_along_axis(w, order, axis=1), axis=1)
    idx = np.minimum((cum < level).sum(axis=1), loc_rows.shape[1] - 1)
    return locs[np.arange(loc_rows.shape[0]), idx]
