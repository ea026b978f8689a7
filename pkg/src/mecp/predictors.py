"""Base predictors: ridge with exact LOOCV, pinball (quantile) fits, softmax.

These are the plug-in model fitters the confidence constructions wrap.
Every fit is deterministic given its inputs; no randomness enters here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp, softmax as _softmax

__all__ = [
    "DEFAULT_LAMBDA_GRID",
    "FitError",
    "PinballModel",
    "RidgeModel",
    "SoftmaxModel",
    "fit_pinball",
    "fit_ridge",
    "fit_softmax",
    "multiclass_loss",
    "predict_logits",
    "predict_ridge",
]

DEFAULT_LAMBDA_GRID: tuple[float, ...] = tuple(10.0**j for j in range(-4, 5))

# relative eigenvalue cutoff below which normal equations count as singular
_SINGULAR_RTOL = 1e-12


class FitError(RuntimeError):
    """A model fit failed; ``details`` carries solver diagnostics."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


def _design(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("x must be a nonempty (n, p) array")
    if not np.isfinite(x).all():
        raise ValueError("x must be finite")
    return np.column_stack([np.ones(x.shape[0]), x])


def _check_outcomes(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError("y must be (n,) matching x")
    if not np.isfinite(y).all():
        raise ValueError("y must be finite")
    return y


@dataclass(frozen=True)
class RidgeModel:
    """Affine ridge fit with an unpenalized intercept.

    ``loocv_mse`` maps each candidate penalty to its exact leave-one-out
    mean squared error (``inf`` marks candidates that were unusable);
    ``singular_fallback`` is set when lambda=0 was requested but its normal
    equations were singular.
    """

    coef: np.ndarray
    intercept: float
    lam: float
    loocv_mse: tuple[tuple[float, float], ...]
    singular_fallback: bool = False

    def predict(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self.coef + self.intercept)
        return x @ self.coef + self.intercept


def _ridge_solve(xt: np.ndarray, y: np.ndarray, lam: float):
    """Coefficients and LOOCV residuals for one penalty, or None if singular.

    Uses the hat-matrix identity: the leave-one-out residual equals
    r_i / (1 - h_ii) for penalized least squares, including the intercept
    column in the hat matrix.
    """
    n, d = xt.shape
    a = xt.T @ xt + np.diag([0.0] + [lam] * (d - 1))
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] <= _SINGULAR_RTOL * max(eigs[-1], 1.0):
        return None
    k = np.linalg.solve(a, xt.T)
    coef = k @ y
    h = np.einsum("ij,ji->i", xt, k)
    denom = 1.0 - h
    if np.any(denom <= 1e-10):
        return coef, None
    loo = (y - xt @ coef) / denom
    return coef, loo


def fit_ridge(x, y, lambda_grid=DEFAULT_LAMBDA_GRID) -> RidgeModel:
    """Ridge regression choosing the penalty by exact leave-one-out error.

    Parameters
    ----------
    x, y : arrays of shape (n, p) and (n,), n >= 2.
    lambda_grid : iterable of nonnegative penalties.
        Scanned in ascending order; ties in LOOCV error keep the smaller
        penalty.  A singular lambda=0 candidate is dropped and flagged; if
        the grid then has no usable entry, the smallest positive value of
        the default grid is used as a last resort.
    """
    xt = _design(x)
    n = xt.shape[0]
    y = _check_outcomes(y, n)
    if n < 2:
        raise ValueError("ridge LOOCV needs n >= 2")
    grid = sorted(float(l) for l in lambda_grid)
    if not grid:
        raise ValueError("lambda_grid must be nonempty")
    if grid[0] < 0:
        raise ValueError("penalties must be nonnegative")

    results: dict[float, tuple[np.ndarray, float]] = {}
    table: list[tuple[float, float]] = []
    singular_zero = False
    for lam in grid:
        solved = _ridge_solve(xt, y, lam)
        if solved is None:
            singular_zero = singular_zero or lam == 0.0
            table.append((lam, math.inf))
            continue
        coef, loo = solved
        mse = math.inf if loo is None else float(np.mean(loo**2))
        results[lam] = (coef, mse)
        table.append((lam, mse))

    usable = {lam: cm for lam, cm in results.items() if math.isfinite(cm[1])}
    fallback = False
    if not usable:
        if singular_zero:
            lam_fb = min(
                (l for l in grid if l > 0),
                default=min(l for l in DEFAULT_LAMBDA_GRID),
            )
            solved = _ridge_solve(xt, y, lam_fb)
            if solved is None or solved[1] is None:
                raise FitError("ridge fallback penalty also unusable", lam=lam_fb)
            coef, loo = solved
            usable = {lam_fb: (coef, float(np.mean(loo**2)))}
            table.append((lam_fb, usable[lam_fb][1]))
            fallback = True
        else:
            raise FitError("no usable penalty in grid", grid=tuple(grid))

    best_lam = min(usable, key=lambda l: (usable[l][1], l))
    coef = usable[best_lam][0]
    return RidgeModel(
        coef=coef[1:],
        intercept=float(coef[0]),
        lam=best_lam,
        loocv_mse=tuple(table),
        singular_fallback=singular_zero,
    )


def predict_ridge(model: RidgeModel, x) -> np.ndarray | float:
    return model.predict(x)


@dataclass(frozen=True)
class PinballModel:
    """Affine quantile fit; ``theta`` stacks (intercept, coefficients)."""

    theta: np.ndarray
    level: float

    def predict(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self.theta[0] + x @ self.theta[1:])
        return self.theta[0] + x @ self.theta[1:]


def fit_pinball(x, y, level: float, tolerance: float = 1e-8) -> PinballModel:
    """Minimize mean pinball loss over affine functions via an exact LP.

    The loss on residual r = y - f(x) is
    ``level * max(r, 0) + (1 - level) * max(-r, 0)``, so ``level`` is the
    quantile being estimated.  The solver (HiGHS) is deterministic; a
    non-optimal exit raises :class:`FitError` with the solver status.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly in (0, 1)")
    xt = _design(x)
    n, d = xt.shape
    y = _check_outcomes(y, n)
    # variables: theta (free), u+ (n), u- (n); residual split r = u+ - u-
    c = np.concatenate([np.zeros(d), np.full(n, level / n), np.full(n, (1 - level) / n)])
    a_eq = np.hstack([xt, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * d + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=a_eq, b_eq=y, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": min(tolerance, 1e-7),
                           "dual_feasibility_tolerance": min(tolerance, 1e-7)})
    if res.status != 0:
        raise FitError("pinball LP did not reach optimality",
                       status=res.status, message=res.message, objective=res.fun)
    return PinballModel(theta=res.x[:d], level=level)


@dataclass(frozen=True)
class SoftmaxModel:
    """Multinomial logit weights, one (intercept, coefficients) row per class."""

    weights: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xt = np.column_stack([np.ones(1 if single else x.shape[0]), np.atleast_2d(x)])
        out = xt @ self.weights.T
        return out[0] if single else out


def predict_logits(model: SoftmaxModel, x) -> np.ndarray:
    return model.logits(x)


def multiclass_loss(y, logits) -> np.ndarray | float:
    """log(sum_i exp(v_i - v_y)), stabilized through log-sum-exp.

    Shift-invariant in the logits.  Accepts a single logit vector with an
    integer label, or an (n, k) batch with an (n,) label array.
    """
    v = np.asarray(logits, dtype=float)
    if v.ndim == 1:
        return float(logsumexp(v) - v[int(y)])
    labels = np.asarray(y, dtype=int)
    return logsumexp(v, axis=1) - v[np.arange(v.shape[0]), labels]


def fit_softmax(
    x,
    y,
    n_classes: int,
    step_schedule: float | Callable[[int], float] = 1.0,
    tolerance: float = 1e-6,
    max_iter: int = 20_000,
) -> SoftmaxModel:
    """Fit multinomial logits by full-batch gradient descent.

    Runs until the Frobenius norm of the mean-loss gradient drops below
    ``tolerance``.  Divergence (non-finite or exploding loss) and hitting
    ``max_iter`` both raise :class:`FitError` with diagnostics.
    """
    xt = _design(x)
    n = xt.shape[0]
    labels = np.asarray(y)
    if labels.shape != (n,):
        raise ValueError("y must be (n,) matching x")
    labels = labels.astype(int)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    step_at = step_schedule if callable(step_schedule) else (lambda _t, s=step_schedule: s)

    w = np.zeros((n_classes, xt.shape[1]))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    loss0 = float(np.mean(multiclass_loss(labels, xt @ w.T)))
    for t in range(max_iter):
        probs = _softmax(xt @ w.T, axis=1)
        grad = (probs - onehot).T @ xt / n
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tolerance:
            return SoftmaxModel(weights=w)
        w = w - step_at(t) * grad
        loss = float(np.mean(multiclass_loss(labels, xt @ w.T)))
        if not math.isfinite(loss) or loss > 10.0 * loss0 + 10.0:
            raise FitError("softmax descent diverged", iteration=t, loss=loss, grad_norm=gnorm)
    raise FitError("softmax descent did not converge", iterations=max_iter, grad_norm=gnorm)
