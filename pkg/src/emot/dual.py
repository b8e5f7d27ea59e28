"""Dual potentials, the plan they induce, and the dual objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NotAbsolutelyContinuous, Overflow
from .measures import DiscreteMeasure, ProblemInstance, reference_measure

OVERFLOW_GUARD = 700.0
NORMALIZED_TOL = 1e-10


@dataclass(frozen=True)
class DualPotentials:
    """Multipliers for the x-marginal (f), y-marginal (g) and martingale (h)."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        f, g, h = (np.array(v, dtype=float) for v in (self.f, self.g, self.h))
        if f.ndim != 1 or g.ndim != 1 or h.shape != f.shape:
            raise ValueError("f and h must share a length; all must be 1-D")
        for name, v in (("f", f), ("g", g), ("h", h)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
            v.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @classmethod
    def zeros(cls, n: int, m: int) -> "DualPotentials":
        return cls(np.zeros(n), np.zeros(m), np.zeros(n))

    def is_normalized(self, mu: DiscreteMeasure, nu: DiscreteMeasure,
                      tol: float = NORMALIZED_TOL) -> bool:
        return (abs(float(np.dot(self.g, nu.weights))) <= tol
                and abs(float(np.dot(self.h, mu.weights))) <= tol)

    def sup_norms(self):
        return (float(np.max(np.abs(self.f))), float(np.max(np.abs(self.g))),
                float(np.max(np.abs(self.h))))


@dataclass(frozen=True)
class TransportPlan:
    pi: np.ndarray
    x_marginal_error: float
    y_marginal_error: float
    martingale_residual: np.ndarray
    relative_martingale_residual: np.ndarray
    total_mass: float

    @property
    def max_relative_residual(self) -> float:
        return float(np.max(np.abs(self.relative_martingale_residual)))

    def x_marginal(self) -> np.ndarray:
        return self.pi.sum(axis=(1, 2))

    def y_marginal(self) -> np.ndarray:
        return self.pi.sum(axis=(0, 2))

    def metadata(self) -> dict:
        return {
            "x_marginal_error": self.x_marginal_error,
            "y_marginal_error": self.y_marginal_error,
            "max_relative_martingale_residual": self.max_relative_residual,
            "max_abs_martingale_residual": float(np.max(np.abs(self.martingale_residual))),
            "martingale_residual": self.martingale_residual.tolist(),
            "total_mass": self.total_mass,
        }


def log_kernel(inst: ProblemInstance, pot: DualPotentials) -> np.ndarray:
    """Exponent -c - f_i - g_j - h_i (y_j - x_i) as an (N, M, L) array."""
    lin = pot.f[:, None] + pot.g[None, :] + pot.h[:, None] * inst.displacement
    return -inst.cost.values - lin[:, :, None]


def _product_weights(inst: ProblemInstance) -> np.ndarray:
    return (inst.mu.weights[:, None, None] * inst.nu.weights[None, :, None]
            * inst.rho.weights[None, None, :])


def _guarded_exp(expo: np.ndarray, prod: np.ndarray) -> np.ndarray:
    live = prod > 0
    if np.any(expo[live] > OVERFLOW_GUARD):
        worst = float(expo[live].max())
        raise Overflow(f"exponent {worst:.1f} exceeds guard {OVERFLOW_GUARD}")
    return np.exp(np.where(live, expo, -np.inf)) * prod


def plan_from_array(inst: ProblemInstance, pi: np.ndarray) -> TransportPlan:
    """Wrap a nonnegative (N, M, L) array and compute its residual metadata."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != inst.shape:
        raise ValueError(f"plan shape {pi.shape} != instance shape {inst.shape}")
    if np.any(pi < 0):
        raise ValueError("plan has negative entries")
    pxy = pi.sum(axis=2)
    mx = pxy.sum(axis=1)
    my = pxy.sum(axis=0)
    resid = (pxy * inst.displacement).sum(axis=1)
    mu_w = inst.mu.weights
    span = inst.y_span
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mu_w > 0, resid / (mu_w * span), 0.0)
    pi = pi.copy()
    pi.setflags(write=False)
    return TransportPlan(
        pi=pi,
        x_marginal_error=float(np.max(np.abs(mx - mu_w))),
        y_marginal_error=float(np.max(np.abs(my - inst.nu.weights))),
        martingale_residual=resid,
        relative_martingale_residual=rel,
        total_mass=float(pi.sum()),
    )


def induced_plan(inst: ProblemInstance, pot: DualPotentials) -> TransportPlan:
    pi = _guarded_exp(log_kernel(inst, pot), _product_weights(inst))
    return plan_from_array(inst, pi)


def total_mass(inst: ProblemInstance, pot: DualPotentials) -> float:
    """Mass Z(f, g, h) of the induced measure."""
    pi = _guarded_exp(log_kernel(inst, pot), _product_weights(inst))
    return float(np.sum(pi))


def dual_objective(inst: ProblemInstance, pot: DualPotentials) -> float:
    """G(f, g, h) = -Z(f, g, h) - <f, mu> - <g, nu>.

    The tensor sum uses numpy's pairwise reduction; the linear terms use
    ``math.fsum`` so that constant shifts between f and g cancel to roundoff.
    """
    z = total_mass(inst, pot)
    lin_f = math.fsum(pot.f * inst.mu.weights)
    lin_g = math.fsum(pot.g * inst.nu.weights)
    return -z - lin_f - lin_g


def apply_invariant_transform(pot: DualPotentials, c1: float, c2: float,
                              x: np.ndarray, y: np.ndarray) -> DualPotentials:
    """(f + c1 - c2 x, g - c1 + c2 y, h - c2); leaves the induced plan unchanged."""
    return DualPotentials(pot.f + c1 - c2 * np.asarray(x),
                          pot.g - c1 + c2 * np.asarray(y),
                          pot.h - c2)


def normalize(pot: DualPotentials, mu: DiscreteMeasure,
              nu: DiscreteMeasure) -> DualPotentials:
    """Fix the gauge so that <g, nu> = <h, mu> = 0.

    With lam_g = <g, nu> and lam_h = <h, mu> this is the invariant transform
    with c2 = lam_h and c1 = lam_g + lam_h * mean(nu). On centered grids
    (mean(nu) = 0) it reduces to the textbook update
    (f + lam_g - lam_h x, g - lam_g + lam_h y, h - lam_h).
    """
    lam_g = math.fsum(pot.g * nu.weights)
    lam_h = math.fsum(pot.h * mu.weights)
    c1 = lam_g + lam_h * nu.mean()
    return apply_invariant_transform(pot, c1, lam_h, mu.points, nu.points)


def relative_entropy(plan, inst: ProblemInstance) -> float:
    """H(plan | Q) = sum pi log(pi / Q), with 0 log 0 = 0."""
    pi = plan.pi if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    q = reference_measure(inst)
    pos = pi > 0
    if np.any(pos & (q <= 0)):
        raise NotAbsolutelyContinuous("plan charges cells where Q vanishes")
    terms = np.zeros_like(pi)
    terms[pos] = pi[pos] * (np.log(pi[pos]) - np.log(q[pos]))
    return float(np.sum(terms))
