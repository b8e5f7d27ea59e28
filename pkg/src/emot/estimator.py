"""scikit-learn style front end for the martingale Sinkhorn solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_problem
from .dual import dual_objective
from .measures import center_means, validate_instance
from .sinkhorn import SolverConfig, fit_convergence_rate, iterate
from .exceptions import InsufficientTrace


class MartingaleSinkhorn(BaseEstimator):
    """Entropic martingale transport solved by coordinate ascent on the dual.

    Parameters
    ----------
    max_iters : int
        Number of full h -> f -> g sweeps allowed.
    g_tol, marginal_tol, martingale_tol : float
        Early-stopping thresholds on the dual increment, the x-marginal error
        and the largest relative martingale residual.
    root_tol : float
        Tolerance of the per-row h root solve (unit-scaled).
    trace_every : int
        Record the trace every this many sweeps.
    center : bool
        Solve on grids translated to mean zero and map the result back.
    mean_tol : float
        Allowed mean gap between mu and nu, relative to the grid span.

    Attributes
    ----------
    potentials_ : DualPotentials
        Normalized optimal potentials on the original grids.
    plan_ : TransportPlan
    trace_ : SolveTrace
    reason_ : str
        ``"converged"`` or ``"max_iters"``.
    n_iter_ : int
    feasibility_ : FeasibilityReport
    shift_ : float
        Translation applied when ``center`` is set.
    """

    def __init__(self, max_iters=1000, g_tol=1e-12, marginal_tol=1e-9,
                 martingale_tol=1e-6, root_tol=1e-12, trace_every=1,
                 center=True, mean_tol=1e-9):
        self.max_iters = max_iters
        self.g_tol = g_tol
        self.marginal_tol = marginal_tol
        self.martingale_tol = martingale_tol
        self.root_tol = root_tol
        self.trace_every = trace_every
        self.center = center
        self.mean_tol = mean_tol

    def _config(self):
        check_positive(self.max_iters, "max_iters", integer=True)
        check_positive(self.trace_every, "trace_every", integer=True)
        for name in ("g_tol", "marginal_tol", "martingale_tol", "root_tol", "mean_tol"):
            check_positive(getattr(self, name), name)
        return SolverConfig(max_iters=self.max_iters, g_tol=self.g_tol,
                            marginal_tol=self.marginal_tol,
                            martingale_tol=self.martingale_tol,
                            root_tol=self.root_tol, trace_every=self.trace_every)

    def fit(self, X, nu=None, rho=None, cost=None, init=None):
        """Solve the instance ``X`` (or the parts ``X=mu, nu, rho, cost``)."""
        config = self._config()
        inst = check_problem(X, nu, rho, cost)
        self.feasibility_ = validate_instance(inst, mean_tol=self.mean_tol)
        work, shift = center_means(inst) if self.center else (inst, 0.0)
        result = iterate(work, init, config)
        # the exponent only sees y - x, so potentials and plan carry over to
        # the original grids unchanged (and remain normalized there)
        pot = result.potentials
        self.instance_ = inst
        self.shift_ = shift
        self.potentials_ = pot
        self.plan_ = result.plan
        self.trace_ = result.trace
        self.reason_ = result.reason
        self.n_iter_ = result.n_iter
        return self

    @property
    def converged_(self):
        check_is_fitted(self, "potentials_")
        return self.reason_ == "converged"

    def score(self, X=None, nu=None, rho=None, cost=None):
        """Dual objective of the fitted potentials (on ``X`` if given)."""
        check_is_fitted(self, "potentials_")
        inst = self.instance_ if X is None else check_problem(X, nu, rho, cost)
        return dual_objective(inst, self.potentials_)

    def transform(self, X=None):
        """Conditional law of (y, z) given each x: ``pi[i] / mu_i``."""
        check_is_fitted(self, "potentials_")
        pi = self.plan_.pi
        mu = self.instance_.mu.weights
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(mu[:, None, None] > 0, pi / mu[:, None, None], 0.0)

    def predict(self, X=None):
        """Conditional mean of y given each x-grid point (equals x at optimum)."""
        cond = self.transform().sum(axis=2)
        return cond @ self.instance_.y

    def convergence_rate(self):
        """``(rate, r_squared)`` of the log-linear fit to the dual gap, or None."""
        check_is_fitted(self, "trace_")
        try:
            return fit_convergence_rate(self.trace_)
        except InsufficientTrace:
            return None
