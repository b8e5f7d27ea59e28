"""Discrete measures, cost tensors, problem instances and feasibility checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .exceptions import (
    ConvexOrderWarning,
    DegenerateNu,
    InfeasibleSupport,
    MeanMismatch,
)

WEIGHT_SUM_TOL = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability weights on a strictly increasing 1-D grid."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = _frozen(self.points)
        weights = _frozen(self.weights)
        if points.ndim != 1 or weights.shape != points.shape:
            raise ValueError(
                f"points and weights must be 1-D of equal length, got "
                f"{points.shape} and {weights.shape}"
            )
        if points.size == 0:
            raise ValueError("empty measure")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(weights)):
            raise ValueError("points and weights must be finite")
        if np.any(np.diff(points) <= 0):
            raise ValueError("points must be strictly increasing")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_counts(cls, points, counts) -> "DiscreteMeasure":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("counts must have positive total")
        return cls(points, counts / total)

    def __len__(self):
        return self.points.size

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of the effective support (weight > 0)."""
        return self.weights > 0

    @property
    def lower(self) -> float:
        return float(self.points[self.support][0])

    @property
    def upper(self) -> float:
        return float(self.points[self.support][-1])

    @property
    def abs_bound(self) -> float:
        return max(abs(self.lower), abs(self.upper))

    def mean(self) -> float:
        return float(np.dot(self.points, self.weights))

    def call_prices(self, strikes) -> np.ndarray:
        """E[(X - k)^+] for each strike k."""
        strikes = np.asarray(strikes, dtype=float)
        payoff = np.maximum(self.points[None, :] - strikes[:, None], 0.0)
        return payoff @ self.weights

    def shifted(self, delta: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + delta, self.weights)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(
            self.weights, other.weights
        )


@dataclass(frozen=True, eq=False)
class CostTensor:
    """Dense c[i, j, k] defining dQ/d(mu x nu x rho) = exp(-c)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 3:
            raise ValueError(f"cost must be rank 3, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cost entries must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, shape) -> "CostTensor":
        return cls(np.zeros(shape))

    @property
    def shape(self):
        return self.values.shape

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class ProblemInstance:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    rho: DiscreteMeasure
    cost: CostTensor

    def __post_init__(self):
        expected = (len(self.mu), len(self.nu), len(self.rho))
        if self.cost.shape != expected:
            raise ValueError(
                f"cost shape {self.cost.shape} does not match measures {expected}"
            )

    @property
    def shape(self):
        return self.cost.shape

    @property
    def x(self) -> np.ndarray:
        return self.mu.points

    @property
    def y(self) -> np.ndarray:
        return self.nu.points

    @property
    def z(self) -> np.ndarray:
        return self.rho.points

    @property
    def displacement(self) -> np.ndarray:
        """Matrix d[i, j] = y_j - x_i."""
        return self.y[None, :] - self.x[:, None]

    @property
    def y_span(self) -> float:
        return float(self.y[-1] - self.y[0])


@dataclass
class FeasibilityReport:
    straddle_ok: bool
    x_bounds: tuple
    y_bounds: tuple
    mean_ok: bool
    mean_gap: float
    mean_tol: float
    nondegenerate: bool
    nu_support_size: int
    convex_order_ok: bool | None = None
    convex_order_violation: float | None = None
    messages: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.straddle_ok and self.mean_ok and self.nondegenerate

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "straddle_ok": self.straddle_ok,
            "x_bounds": list(self.x_bounds),
            "y_bounds": list(self.y_bounds),
            "mean_ok": self.mean_ok,
            "mean_gap": self.mean_gap,
            "mean_tol": self.mean_tol,
            "nondegenerate": self.nondegenerate,
            "nu_support_size": self.nu_support_size,
            "convex_order_ok": self.convex_order_ok,
            "convex_order_violation": self.convex_order_violation,
            "messages": list(self.messages),
        }


def convex_order_defect(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Largest shortfall of nu's call prices below mu's over all grid strikes.

    Returns a value <= 0 when mu <=_c nu holds at every grid point (call
    prices are piecewise linear between the pooled grid, so checking the
    pooled points is exhaustive).
    """
    strikes = np.union1d(mu.points, nu.points)
    gap = mu.call_prices(strikes) - nu.call_prices(strikes)
    return float(gap.max())


def check_instance(
    inst: ProblemInstance,
    mean_tol: float = 1e-9,
    check_convex_order: bool = True,
    convex_tol: float = 1e-9,
) -> FeasibilityReport:
    """Run every feasibility check and return the report without raising."""
    mu, nu = inst.mu, inst.nu
    span = float(max(mu.points[-1], nu.points[-1]) - min(mu.points[0], nu.points[0]))
    span = span if span > 0 else 1.0
    straddle = nu.lower < mu.lower and nu.upper > mu.upper
    gap = abs(mu.mean() - nu.mean())
    n_eff = int(np.count_nonzero(nu.support))
    report = FeasibilityReport(
        straddle_ok=bool(straddle),
        x_bounds=(mu.lower, mu.upper),
        y_bounds=(nu.lower, nu.upper),
        mean_ok=bool(gap <= mean_tol * span),
        mean_gap=float(gap),
        mean_tol=float(mean_tol * span),
        nondegenerate=n_eff >= 2,
        nu_support_size=n_eff,
    )
    if not report.straddle_ok:
        report.messages.append(
            f"y support [{nu.lower}, {nu.upper}] does not strictly straddle "
            f"x support [{mu.lower}, {mu.upper}]"
        )
    if not report.mean_ok:
        report.messages.append(f"mean gap {gap:.3e} exceeds {mean_tol * span:.3e}")
    if not report.nondegenerate:
        report.messages.append("nu is a point mass")
    if check_convex_order:
        defect = convex_order_defect(mu, nu)
        report.convex_order_violation = defect
        report.convex_order_ok = defect <= convex_tol * span
        if not report.convex_order_ok:
            report.messages.append(f"convex order violated by {defect:.3e}")
    return report


def validate_instance(inst: ProblemInstance, **kwargs) -> FeasibilityReport:
    """Check feasibility and raise on hard failures.

    Raises DegenerateNu, InfeasibleSupport or MeanMismatch (in that order of
    precedence); each carries the full report as ``.report``. A convex order
    violation only emits a ConvexOrderWarning.
    """
    report = check_instance(inst, **kwargs)
    err = None
    # a point-mass nu also fails the straddle; report the more specific cause
    if not report.nondegenerate:
        err = DegenerateNu("nu is a point mass")
    elif not report.straddle_ok:
        err = InfeasibleSupport(report.messages[0])
    elif not report.mean_ok:
        err = MeanMismatch(f"mean gap {report.mean_gap:.3e} > {report.mean_tol:.3e}")
    if err is not None:
        err.report = report
        raise err
    if report.convex_order_ok is False:
        warnings.warn(
            f"marginals violate convex order by {report.convex_order_violation:.3e}",
            ConvexOrderWarning,
            stacklevel=2,
        )
    return report


def center_means(inst: ProblemInstance, atol: float = 1e-12):
    """Translate the x and y grids so that mu has mean zero.

    Returns ``(centered, shift)``; add ``shift`` back to recover the original
    coordinates. Cost values are carried over unchanged. Instances whose mean
    is already within ``atol * span`` of zero are returned as-is with shift 0,
    which makes the operation idempotent.
    """
    m = inst.mu.mean()
    span = float(inst.y[-1] - inst.y[0]) or 1.0
    if abs(m) <= atol * span:
        return inst, 0.0
    centered = replace(inst, mu=inst.mu.shifted(-m), nu=inst.nu.shifted(-m))
    return centered, m


def uncenter(inst: ProblemInstance, shift: float) -> ProblemInstance:
    if shift == 0.0:
        return inst
    return replace(inst, mu=inst.mu.shifted(shift), nu=inst.nu.shifted(shift))


def reference_measure(inst: ProblemInstance) -> np.ndarray:
    """Full tensor Q[i, j, k] = exp(-c_ijk) mu_i nu_j rho_k."""
    prod = (
        inst.mu.weights[:, None, None]
        * inst.nu.weights[None, :, None]
        * inst.rho.weights[None, None, :]
    )
    return np.exp(-inst.cost.values) * prod


def reference_measure_density(inst: ProblemInstance, i: int, j: int, k: int) -> float:
    return float(
        np.exp(-inst.cost.values[i, j, k])
        * inst.mu.weights[i]
        * inst.nu.weights[j]
        * inst.rho.weights[k]
    )


def match_mean(measure: DiscreteMeasure, target: float) -> DiscreteMeasure:
    """Exponentially tilt ``measure`` so its mean equals ``target``.

    The tilt w_j * exp(theta * p_j) is the smallest relative-entropy change
    that hits the target mean; it keeps the support and the ordering of
    weights. The target must lie strictly inside the effective support.
    """
    sup = measure.support
    p = measure.points
    lo, hi = p[sup][0], p[sup][-1]
    if not lo < target < hi:
        raise ValueError(f"target mean {target} outside support ({lo}, {hi})")
    scale = hi - lo
    u = (p - target) / scale
    logw = np.full_like(p, -np.inf)
    logw[sup] = np.log(measure.weights[sup])

    def tilted(theta):
        a = logw + theta * u
        a = a - a[sup].max()
        w = np.exp(a)
        return w / w.sum()

    def gap(theta):
        return float(np.dot(tilted(theta), u))

    if gap(0.0) == 0.0:
        return measure
    bound = 1.0
    while gap(-bound) > 0 or gap(bound) < 0:
        bound *= 2.0
        if bound > 1e6:
            raise ValueError("mean tilt did not bracket")
    theta = brentq(gap, -bound, bound, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return DiscreteMeasure(p, tilted(theta))
