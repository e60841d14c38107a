"""Deterministic damped-Newton minimizer for small smooth convex objectives.

Backtracking line search guarantees a non-increasing loss trace; convergence
is declared when the gradient infinity-norm drops below the tolerance.
"""

from __future__ import annotations

import numpy as np


class OptimizationError(RuntimeError):
    pass


def minimize_newton(objective, x0, tol=1e-8, max_iter=500):
    """Minimize a convex objective with damped Newton iterations.

    ``objective(x)`` must return (value, gradient, hessian). Returns
    (x, loss_trace, converged); the trace includes the initial loss and is
    non-increasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g, H = objective(x)
    if not np.isfinite(f):
        raise OptimizationError("non-finite loss at initial point")
    trace = [float(f)]
    converged = False
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            converged = True
            break
        try:
            p = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            p = np.linalg.solve(H + 1e-10 * np.eye(len(g)), -g)
        # Armijo backtracking
        step = 1.0
        gTp = g @ p
        if gTp > 0:  # numerically non-descent; fall back to steepest descent
            p = -g
            gTp = g @ p
        accepted = False
        for _ls in range(60):
            cand = x + step * p
            fc, gc, Hc = objective(cand)
            if np.isfinite(fc) and fc <= f + 1e-4 * step * gTp:
                x, f, g, H = cand, fc, gc, Hc
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no further progress at machine precision
        trace.append(float(f))
    if not np.isfinite(f):
        raise OptimizationError("non-finite loss during optimization")
    return x, trace, converged


def splitmix64(z: int) -> int:
    """Fixed 64-bit scrambler used to derive per-replicate RNG seeds."""
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


def derived_seed(master_seed: int, index: int) -> int:
    """Order-independent seed for the index-th parallel unit of work."""
    return splitmix64((int(master_seed) & 0xFFFFFFFFFFFFFFFF) ^ (index + 1))
