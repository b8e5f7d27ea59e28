"""Martingale Sinkhorn iteration: h-solve, f- and g-updates, normalization."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import linregress

from . import dual as _dual
from .dual import DualPotentials, TransportPlan, dual_objective, induced_plan, normalize
from .exceptions import BracketFailure, InsufficientTrace, Overflow, SolverAbort
from .measures import ProblemInstance
from .scalar_solver import solve_rows

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "G", "mx_err", "my_err", "mart_rel",
                 "max_f", "max_g", "max_h", "ms")


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 1000
    g_tol: float = 1e-12
    marginal_tol: float = 1e-9
    martingale_tol: float = 1e-6
    root_tol: float = 1e-12
    overflow_guard: float = _dual.OVERFLOW_GUARD
    trace_every: int = 1
    raise_on_abort: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")
        for name in ("g_tol", "marginal_tol", "martingale_tol", "root_tol",
                     "overflow_guard"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)

    def append(self, **values):
        self.rows.append(tuple(values[c] for c in TRACE_COLUMNS))

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        return np.array([r[idx] for r in self.rows])

    @property
    def iterations(self) -> np.ndarray:
        return self.column("iter").astype(int)

    @property
    def G(self) -> np.ndarray:
        return self.column("G")

    def is_monotone(self, slack: float = 1e-12) -> bool:
        g = self.G
        return bool(np.all(np.diff(g) >= -slack))


@dataclass
class SolveResult:
    potentials: DualPotentials
    plan: TransportPlan
    trace: SolveTrace
    reason: str
    n_iter: int

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def G(self) -> float:
        return float(self.trace.G[-1])


def reduced_log_kernel(inst: ProblemInstance) -> np.ndarray:
    """log sum_k exp(-c_ijk) rho_k, the z-integrated kernel of shape (N, M).

    None of the potentials depend on z, so every update only needs this.
    """
    return logsumexp(-inst.cost.values, b=inst.rho.weights[None, None, :], axis=2)


def _check_guard(expo, live, guard):
    if np.any(expo[live] > guard):
        raise Overflow(f"exponent {float(expo[live].max()):.1f} exceeds guard {guard}")


def _h_step(kern, inst, g, h_prev, tol):
    rows = inst.mu.support
    with np.errstate(divide="ignore"):
        logw = kern - g[None, :] + np.log(inst.nu.weights)[None, :]
    h = np.array(h_prev, dtype=float, copy=True)
    idx = np.flatnonzero(rows)
    try:
        h[idx] = solve_rows(logw[idx], inst.displacement[idx], h_prev[idx], tol)
    except BracketFailure as exc:
        row = int(idx[exc.row]) if exc.row is not None else None
        raise BracketFailure(f"x row {row}: {exc}", row=row) from None
    return h


def _f_step(kern, inst, g, h, guard):
    expo = kern - g[None, :] - h[:, None] * inst.displacement
    _check_guard(expo, np.broadcast_to(inst.nu.support[None, :], expo.shape), guard)
    return logsumexp(expo, b=inst.nu.weights[None, :], axis=1)


def _g_step(kern, inst, f, h, guard):
    expo = kern - f[:, None] - h[:, None] * inst.displacement
    _check_guard(expo, np.broadcast_to(inst.mu.support[:, None], expo.shape), guard)
    return logsumexp(expo, b=inst.mu.weights[:, None], axis=0)


def h_step(inst: ProblemInstance, f, g, h_prev=None, tol: float = 1e-12) -> np.ndarray:
    """Solve the martingale condition row by row; f cancels and is unused.

    Rows outside the support of mu keep ``h_prev`` (zero by default).
    """
    g = np.asarray(g, dtype=float)
    h_prev = np.zeros(len(inst.mu)) if h_prev is None else np.asarray(h_prev, dtype=float)
    return _h_step(reduced_log_kernel(inst), inst, g, h_prev, tol)


def f_step(inst: ProblemInstance, g, h_tilde,
           guard: float = _dual.OVERFLOW_GUARD) -> np.ndarray:
    """f_i = log sum_jk exp(-c_ijk - g_j - h_i (y_j - x_i)) nu_j rho_k."""
    return _f_step(reduced_log_kernel(inst), inst, np.asarray(g, float),
                   np.asarray(h_tilde, float), guard)


def g_step(inst: ProblemInstance, f_tilde, h_tilde,
           guard: float = _dual.OVERFLOW_GUARD) -> np.ndarray:
    """g_j = log sum_ik exp(-c_ijk - f_i - h_i (y_j - x_i)) mu_i rho_k."""
    return _g_step(reduced_log_kernel(inst), inst, np.asarray(f_tilde, float),
                   np.asarray(h_tilde, float), guard)


def iterate(inst: ProblemInstance, pot: DualPotentials | None = None,
            config: SolverConfig | None = None) -> SolveResult:
    """Run the coordinate ascent h -> f -> g -> normalize until convergence.

    Stops once the x-marginal error, the largest relative martingale residual
    and the increment of G are all within tolerance, or after
    ``config.max_iters`` sweeps. Iteration 0 in the trace is the starting
    point.
    """
    config = config or SolverConfig()
    n, m, _ = inst.shape
    pot = pot or DualPotentials.zeros(n, m)
    if pot.f.shape != (n,) or pot.g.shape != (m,):
        raise ValueError("initial potentials do not match the instance shape")
    guard = config.overflow_guard
    kern = reduced_log_kernel(inst)
    trace = SolveTrace()
    t0 = time.perf_counter()

    def record(it, p, plan, G):
        mf, mg, mh = p.sup_norms()
        trace.append(iter=it, G=G, mx_err=plan.x_marginal_error,
                     my_err=plan.y_marginal_error,
                     mart_rel=plan.max_relative_residual,
                     max_f=mf, max_g=mg, max_h=mh,
                     ms=(time.perf_counter() - t0) * 1e3)

    plan = induced_plan(inst, pot)
    G_prev = dual_objective(inst, pot)
    record(0, pot, plan, G_prev)
    f, g, h = pot.f.copy(), pot.g.copy(), pot.h.copy()
    reason = "max_iters"
    it = 0
    try:
        for it in range(1, config.max_iters + 1):
            h = _h_step(kern, inst, g, h, config.root_tol)
            f = _f_step(kern, inst, g, h, guard)
            g = _g_step(kern, inst, f, h, guard)
            pot = normalize(DualPotentials(f, g, h), inst.mu, inst.nu)
            f, g, h = pot.f, pot.g, pot.h
            plan = induced_plan(inst, pot)
            G = dual_objective(inst, pot)
            done = (plan.x_marginal_error <= config.marginal_tol
                    and plan.max_relative_residual <= config.martingale_tol
                    and abs(G - G_prev) <= config.g_tol)
            G_prev = G
            if done or it % config.trace_every == 0 or it == config.max_iters:
                record(it, pot, plan, G)
            if done:
                reason = "converged"
                break
    except (SolverAbort, FloatingPointError, ValueError) as exc:
        logger.warning("solver aborted at iteration %d: %s", it, exc)
        if config.raise_on_abort:
            if isinstance(exc, SolverAbort):
                exc.trace = trace
                raise
            raise SolverAbort(str(exc), trace=trace) from exc
        return SolveResult(pot, plan, trace, "infeasible-suspect", it)
    logger.info("sinkhorn stopped after %d iterations (%s), G=%.15g",
                it, reason, G_prev)
    return SolveResult(pot, plan, trace, reason, it)


def fit_convergence_rate(trace, floor: float | None = None,
                         min_points: int = 10):
    """Fit log(G_best - G_n + eps) ~ a - rate * n over the pre-floor segment.

    ``eps`` is max(1e-14, last G increment) unless given. The segment is the
    leading run of recorded points whose gap to the best value exceeds
    10 * eps. Returns ``(rate, r_squared)``.
    """
    if isinstance(trace, SolveTrace):
        iters = trace.iterations.astype(float)
        G = trace.G
    else:
        iters, G = (np.asarray(a, dtype=float) for a in trace)
    if G.size < 2:
        raise InsufficientTrace("need at least two recorded points")
    eps = floor if floor is not None else max(1e-14, float(G[-1] - G[-2]))
    gap = G.max() - G
    below = np.flatnonzero(gap <= 10.0 * eps)
    end = int(below[0]) if below.size else G.size
    if end < min_points:
        raise InsufficientTrace(
            f"only {end} points before the residual floor (need {min_points})"
        )
    fit = linregress(iters[:end], np.log(gap[:end] + eps))
    return float(-fit.slope), float(fit.rvalue ** 2)
