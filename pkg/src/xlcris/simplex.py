"""Nelder-Mead downhill simplex minimizer."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np


class SimplexResult(NamedTuple):
    x: np.ndarray
    fun: float
    n_iter: int
    n_eval: int
    converged: bool


def nelder_mead(
    func: Callable[[np.ndarray], float],
    x0,
    step,
    xatol=1e-8,
    fatol: float = np.inf,
    frtol: float = 0.0,
    max_iter: int = 1000,
    alpha: float = 1.0,
    gamma: float = 2.0,
    rho: float = 0.5,
    sigma: float = 0.5,
) -> SimplexResult:
    """Minimize ``func`` from ``x0`` with the classic reflect/expand/contract/shrink moves.

    Parameters
    ----------
    func : callable
        Objective of a 1-D array.
    x0 : array_like
        Starting vertex.
    step : float or array_like
        Offset of the other initial vertices along each axis.
    xatol : float or array_like
        Per-coordinate tolerance on the simplex extent.
    fatol : float
        Tolerance on the spread of objective values; both tolerances must
        hold.  The default leaves the decision to ``xatol``.
    frtol : float
        Independent stop once the spread of objective values falls below
        ``frtol * max(1, |f_best|)``, i.e. the simplex sits on a plateau that
        floating point cannot resolve any further.  Disabled when 0.
    max_iter : int
        Iteration cap; the best vertex found so far is returned with
        ``converged=False`` when it is reached.

    Returns
    -------
    SimplexResult
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    xatol = np.broadcast_to(np.asarray(xatol, dtype=float), (n,))

    simplex = np.vstack([x0, x0 + np.diag(step)])
    fvals = np.array([func(v) for v in simplex])
    n_eval = n + 1

    n_iter = 0
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        extent = np.max(np.abs(simplex[1:] - simplex[0]), axis=0)
        spread = fvals[-1] - fvals[0]
        if np.all(extent <= xatol) and spread <= fatol:
            converged = True
            break
        if frtol > 0 and spread <= frtol * max(1.0, abs(fvals[0])):
            converged = True
            break
        if n_iter >= max_iter:
            break
        n_iter += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = func(xr)
        n_eval += 1
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = func(xe)
            n_eval += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        # contraction, outside when the reflection beat the worst vertex
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)
        else:
            xc = centroid + rho * (worst - centroid)
        fc = func(xc)
        n_eval += 1
        if fc < min(fr, fvals[-1]):
            simplex[-1], fvals[-1] = xc, fc
            continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        fvals[1:] = [func(v) for v in simplex[1:]]
        n_eval += n

    return SimplexResult(x=simplex[0].copy(), fun=float(fvals[0]), n_iter=n_iter, n_eval=n_eval, converged=converged)
