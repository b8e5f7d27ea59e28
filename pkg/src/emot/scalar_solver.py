"""Root solver for the martingale first-order condition.

For a fixed row x_i the h-update solves

    sum_j d_j w_j exp(-h d_j) = 0,     d_j = y_j - x_i,

with positive weights w_j. We work with the scaled function

    phi(h) = sum_j d_j w_j exp(-h d_j) / sum_j w_j exp(-h d_j),

the mean of d under the exponentially tilted weights. It has the same root,
is bounded by max |d|, does not overflow, and is strictly decreasing
(phi' = -variance of d under the tilt). Internally the problem is rescaled
to unit displacement (u = d / max|d|, t = h * max|d|) so that the bracket
step, bisection width and tolerance are dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BracketFailure

BRACKET_LIMIT = 1e6
BISECT_WIDTH = 1e-8
MAX_NEWTON = 20


@dataclass(frozen=True)
class RootProblem:
    weights: np.ndarray
    displacements: np.ndarray
    tolerance: float = 1e-12

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        d = np.asarray(self.displacements, dtype=float)
        if w.shape != d.shape or w.ndim != 1:
            raise ValueError("weights and displacements must be 1-D of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "displacements", d)

    def has_bracket(self) -> bool:
        d = self.displacements[self.weights > 0]
        return bool(np.any(d > 0) and np.any(d < 0))


def _tilted_moments(logw, u, t):
    """Mean and variance of u under weights exp(logw - t u), row-wise."""
    a = logw - t[:, None] * u
    a = a - np.max(a, axis=1, keepdims=True)
    e = np.exp(a)
    s0 = e.sum(axis=1)
    mean = (e * u).sum(axis=1) / s0
    var = (e * (u - mean[:, None]) ** 2).sum(axis=1) / s0
    return mean, var


def solve_rows(logw, d, h0=None, tol=1e-12):
    """Vectorized safeguarded Newton-bisection over the rows of ``d``.

    ``logw`` holds log-weights (``-inf`` marks an excluded entry) with the same
    shape as ``d``. Returns the root of each row in the original h units.
    Raises BracketFailure carrying the offending row index.
    """
    logw = np.asarray(logw, dtype=float)
    d = np.asarray(d, dtype=float)
    n_rows = d.shape[0]
    live = np.isfinite(logw)
    scale = np.where(live, np.abs(d), 0.0).max(axis=1)
    bad = np.flatnonzero(
        ~(np.any(live & (d > 0), axis=1) & np.any(live & (d < 0), axis=1))
    )
    if bad.size:
        raise BracketFailure(
            f"row {bad[0]}: displacements do not change sign on the support",
            row=int(bad[0]),
        )
    u = np.where(live, d / scale[:, None], 0.0)
    t = np.zeros(n_rows) if h0 is None else np.asarray(h0, dtype=float) * scale

    # bracket by doubling away from the warm start
    phi0, _ = _tilted_moments(logw, u, t)
    direction = np.where(phi0 > 0, 1.0, -1.0)
    lo = np.where(phi0 > 0, t, -np.inf)
    hi = np.where(phi0 > 0, np.inf, t)
    done = phi0 == 0
    lo[done] = hi[done] = t[done]
    step = np.ones(n_rows)
    pending = ~done
    while np.any(pending):
        trial = t + direction * step
        over = pending & (np.abs(trial) > BRACKET_LIMIT)
        if np.any(over):
            row = int(np.flatnonzero(over)[0])
            raise BracketFailure(
                f"row {row}: no sign change within |h| <= {BRACKET_LIMIT / scale[row]:.3g}",
                row=row,
            )
        val, _ = _tilted_moments(logw, u, trial)
        pos = val > 0
        up = pending & (direction > 0)
        down = pending & (direction < 0)
        # moving right: a positive value raises lo, otherwise closes hi
        lo = np.where(up & pos, trial, lo)
        hi = np.where(up & ~pos, trial, hi)
        hi = np.where(down & ~pos, trial, hi)
        lo = np.where(down & pos, trial, lo)
        pending = pending & ~((up & ~pos) | (down & pos))
        step = np.where(pending, 2.0 * step, step)

    # plain bisection down to a fixed width
    while True:
        wide = (hi - lo) > BISECT_WIDTH
        if not np.any(wide):
            break
        mid = 0.5 * (lo + hi)
        val, _ = _tilted_moments(logw, u, mid)
        lo = np.where(wide & (val > 0), mid, lo)
        hi = np.where(wide & (val <= 0), mid, hi)

    # Newton polish, falling back to bisection when a step leaves the bracket
    t = 0.5 * (lo + hi)
    active = np.ones(n_rows, dtype=bool)
    for _ in range(MAX_NEWTON):
        val, var = _tilted_moments(logw, u, t)
        conv = (np.abs(val) <= tol) | ((hi - lo) <= tol * np.maximum(1.0, np.abs(t)))
        active &= ~conv
        if not np.any(active):
            break
        lo = np.where(active & (val > 0), t, lo)
        hi = np.where(active & (val < 0), t, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = t + val / var
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        nxt = np.where(inside, newton, 0.5 * (lo + hi))
        t = np.where(active, nxt, t)
    return t / scale


def phi(prob: RootProblem, h: float) -> float:
    """Scaled first-order condition; same sign and root as the raw sum."""
    live = prob.weights > 0
    d = prob.displacements[live]
    a = np.log(prob.weights[live]) - h * d
    a -= a.max()
    e = np.exp(a)
    return float(np.dot(e, d) / e.sum())


def phi_prime(prob: RootProblem, h: float) -> float:
    """Derivative of ``phi``: minus the tilted variance of the displacements."""
    live = prob.weights > 0
    d = prob.displacements[live]
    a = np.log(prob.weights[live]) - h * d
    a -= a.max()
    e = np.exp(a)
    e /= e.sum()
    mean = np.dot(e, d)
    return float(-np.dot(e, (d - mean) ** 2))


def solve_h(prob: RootProblem, h0: float = 0.0) -> float:
    """Root of ``phi`` for a single row, warm-started at ``h0``."""
    with np.errstate(divide="ignore"):
        logw = np.log(prob.weights)
    return float(
        solve_rows(logw[None, :], prob.displacements[None, :], np.array([h0]),
                   prob.tolerance)[0]
    )
