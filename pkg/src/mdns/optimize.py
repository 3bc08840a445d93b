"""Derivative-free simplex maximization with restarts.

Nelder-Mead itself comes from :func:`scipy.optimize.minimize`; this module
adds the axis-aligned initial simplex, the restart schedule (re-initialize
around the incumbent with halved steps) and the bookkeeping the fitters need.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import BudgetExhausted, NoImprovement


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    evals: int
    converged: bool
    start_value: float


def _simplex(x0, steps):
    k = x0.size
    sim = np.tile(x0, (k + 1, 1))
    sim[1:] += np.diag(steps)
    return sim


def maximize(
    f,
    x0,
    steps,
    *,
    max_evals: int = 2000,
    restarts: int = 2,
    xatol: float = 1e-6,
    fatol: float = 1e-8,
    adaptive: bool | None = None,
) -> SimplexResult:
    """Maximize ``f`` starting from ``x0``.

    Non-finite objective values are treated as ``-inf``. ``max_evals`` is
    the budget for each simplex run; ``restarts`` extra runs start from the
    incumbent with the steps halved each time. The result never has a lower
    value than ``f(x0)``.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x0.shape).copy()
    if adaptive is None:
        adaptive = x0.size > 8
    evals = 0

    def neg(x):
        nonlocal evals
        evals += 1
        v = f(x)
        return -v if math.isfinite(v) else math.inf

    start = -neg(x0)
    best_x, best = x0, start
    converged = False
    if x0.size == 0:
        return SimplexResult(x0, start, evals, math.isfinite(start), start)
    for run in range(restarts + 1):
        res = minimize(
            neg,
            best_x,
            method="Nelder-Mead",
            options={
                "initial_simplex": _simplex(best_x, steps / (2.0**run)),
                "maxfev": max_evals,
                "maxiter": 10 * max_evals,
                "xatol": xatol,
                "fatol": fatol,
                "adaptive": adaptive,
            },
        )
        converged = bool(res.success)
        if math.isfinite(res.fun) and -res.fun > best:
            gain = -res.fun - best
            best_x, best = np.asarray(res.x, dtype=float), -float(res.fun)
            if converged and gain <= fatol and run > 0:
                break
        elif converged and run > 0:
            break
    if not math.isfinite(best):
        raise NoImprovement("optimizer found no point with a finite objective")
    if not converged:
        warnings.warn(f"simplex budget of {max_evals} evaluations exhausted", BudgetExhausted, stacklevel=2)
    return SimplexResult(best_x, best, evals, converged, start)
