"""Independent reference implementations used to freeze expected values.

Everything here is written against the mathematical definitions with exact
rational index/CDF arithmetic where feasible, deliberately avoiding the
package's own code paths so tests compare two routes to the same answer.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def oracle_quant_plus(values, alpha: float) -> float:
    """ceil((1-alpha)(n+1))-th smallest value via exact rational index math."""
    v = sorted(float(x) for x in values)
    n = len(v)
    k = math.ceil((Fraction(1) - Fraction(alpha)) * (n + 1))
    if k > n:
        return math.inf
    return v[k - 1]


def oracle_quant_minus(values, alpha: float) -> float:
    """floor(alpha(n+1))-th smallest value via exact rational index math."""
    v = sorted(float(x) for x in values)
    n = len(v)
    k = math.floor(Fraction(alpha) * (n + 1))
    if k < 1:
        return -math.inf
    return v[k - 1]


def _exact_cdf_pairs(locations, weights):
    pairs = sorted(zip(locations, weights), key=lambda lw: lw[0])
    cum = Fraction(0)
    out = []
    for loc, w in pairs:
        cum += Fraction(float(w))
        out.append((float(loc), cum))
    return out


def oracle_left_quantile(locations, weights, alpha: float) -> float:
    """inf{t : P(Z <= t) >= alpha} with exact cumulative weights."""
    level = Fraction(alpha)
    pairs = _exact_cdf_pairs(locations, weights)
    for loc, cum in pairs:
        if cum >= level:
            return loc
    return pairs[-1][0]


def oracle_right_quantile(locations, weights, alpha: float) -> float:
    """sup{t : P(Z <= t) < alpha} realized by a strict-sublevel scan.

    The scan verifies the supremum reading: every probe strictly below the
    returned atom has CDF < alpha, and the returned atom's CDF is >= alpha.
    """
    level = Fraction(alpha)
    pairs = _exact_cdf_pairs(locations, weights)
    answer = None
    below = Fraction(0)
    for loc, cum in pairs:
        if cum >= level:
            answer = loc
            break
        below = cum
    if answer is None:
        return pairs[-1][0]
    assert below < level
    return answer


def oracle_interval_measure(parts, clip, n_grid: int = 2_000_001) -> float:
    """Rasterized Lebesgue measure of a union of closed intervals within clip."""
    lo, hi = clip
    ts = np.linspace(lo, hi, n_grid)
    inside = np.zeros(ts.shape, dtype=bool)
    for a, b in parts:
        inside |= (ts >= a) & (ts <= b)
    return float(inside.mean() * (hi - lo))


def oracle_union_measure_exact(parts, clip=None) -> float:
    """Union length via midpoint probes on the endpoint partition.

    Every maximal covered stretch is bounded by input endpoints (or clip
    bounds), so summing the partition cells whose midpoint lies inside some
    part is exact up to float addition. Finite endpoints only.
    """
    pts = []
    for a, b in parts:
        pts.extend((a, b))
    if clip is not None:
        lo, hi = clip
        pts = [min(max(t, lo), hi) for t in pts] + [lo, hi]
    cuts = sorted(set(pts))
    total = 0.0
    for t0, t1 in zip(cuts, cuts[1:]):
        mid = 0.5 * (t0 + t1)
        if any(a <= mid <= b for a, b in parts):
            total += t1 - t0
    return total


def oracle_ridge_loo_errors(x, y, lam: float) -> np.ndarray:
    """Leave-one-out residuals by literally refitting n times.

    Intercept unpenalized; the penalty matrix is diag(0, lam, ..., lam).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    xt = np.column_stack([np.ones(n), x])
    pen = np.diag([0.0] + [lam] * p)
    errs = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        a = xt[keep].T @ xt[keep] + pen
        coef = np.linalg.solve(a, xt[keep].T @ y[keep])
        errs[i] = y[i] - xt[i] @ coef
    return errs


def oracle_pinball_objective(x_design, y, theta, level: float) -> float:
    """Mean pinball loss of an affine fit; x_design already has the 1 column."""
    r = np.asarray(y, dtype=float) - np.asarray(x_design, dtype=float) @ theta
    return float(np.mean(level * np.clip(r, 0, None) + (1 - level) * np.clip(-r, 0, None)))


def oracle_pinball_vertex_min(x_design, y, level: float) -> float:
    """Best objective over all interpolating vertex candidates.

    A minimizer of the pinball LP sits at a vertex where the fit
    interpolates d = x_design.shape[1] points (generic position), so
    enumerating all d-subsets and keeping the best objective recovers the
    optimal value.
    """
    x_design = np.asarray(x_design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x_design.shape
    best = math.inf
    for rows in itertools.combinations(range(n), d):
        sub = x_design[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        theta = np.linalg.solve(sub, y[list(rows)])
        best = min(best, oracle_pinball_objective(x_design, y, theta, level))
    return best


def oracle_softmax_grad(weights, x_design, labels, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the mean multiclass log loss."""
    weights = np.asarray(weights, dtype=float)
    x_design = np.asarray(x_design, dtype=float)
    labels = np.asarray(labels)

    def mean_loss(w):
        logits = x_design @ w.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
        return float(np.mean(lse - logits[np.arange(len(labels)), labels]))

    grad = np.zeros_like(weights)
    for idx in np.ndindex(*weights.shape):
        up = weights.copy()
        up[idx] += eps
        dn = weights.copy()
        dn[idx] -= eps
        grad[idx] = (mean_loss(up) - mean_loss(dn)) / (2 * eps)
    return grad


def oracle_jackknife_plus_interval(preds, residuals, alpha: float) -> tuple[float, float]:
    """Plain single-level jackknife+ interval from leave-one-out pieces."""
    preds = np.asarray(preds, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    lo = oracle_quant_minus(preds - residuals, alpha)
    hi = oracle_quant_plus(preds + residuals, alpha)
    return lo, hi


def oracle_env_score(thresholds, alpha: float) -> float:
    """Smallest tau with strictly more than a (1-alpha) fraction covered.

    Scans candidate tau values (the thresholds themselves) instead of using
    an order-statistic index.
    """
    ts = sorted(float(t) for t in thresholds)
    n = len(ts)
    for tau in ts:
        frac = Fraction(sum(1 for t in ts if t <= tau), n)
        if frac > Fraction(1) - Fraction(alpha):
            return tau
    raise AssertionError("unreachable: the largest threshold always covers everything")
