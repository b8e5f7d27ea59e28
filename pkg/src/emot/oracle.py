"""Small-instance reference solvers used to certify the Sinkhorn output.

The ascent here updates all potentials at once along the L2(mu)/L2(nu)
gradient with Armijo backtracking. It shares no update code with the
coordinate ascent in :mod:`emot.sinkhorn`, so agreement between the two is
real evidence of correctness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import DualPotentials, dual_objective, relative_entropy
from .exceptions import NoConvergence
from .measures import CostTensor, DiscreteMeasure, ProblemInstance, match_mean

MAX_SHAPE = (50, 50, 10)
ARMIJO_C1 = 1e-4


def _kernel(inst):
    # z-integrated Gibbs weights exp(-c) rho, times mu_i nu_j
    k = (np.exp(-inst.cost.values) * inst.rho.weights).sum(axis=2)
    return k * inst.mu.weights[:, None] * inst.nu.weights[None, :]


def _plan_xy(kern, d, f, g, h):
    return kern * np.exp(-f[:, None] - g[None, :] - h[:, None] * d)


def _gradients(pxy, d, mu, nu):
    """L2 gradients of G: conditional marginal and martingale defects."""
    with np.errstate(divide="ignore", invalid="ignore"):
        gf = np.where(mu > 0, pxy.sum(axis=1) / mu - 1.0, 0.0)
        gg = np.where(nu > 0, pxy.sum(axis=0) / nu - 1.0, 0.0)
        gh = np.where(mu > 0, (pxy * d).sum(axis=1) / mu, 0.0)
    return gf, gg, gh


def full_gradient_ascent(inst: ProblemInstance, init: DualPotentials | None = None,
                         tol: float = 1e-10, max_iter: int = 200_000,
                         c1: float = ARMIJO_C1) -> DualPotentials:
    """Maximize G by simultaneous gradient steps.

    Steps start from a Barzilai-Borwein guess and are halved until the Armijo
    condition holds. The increase of G is evaluated as
    -sum pi * expm1(-delta) - <df, mu> - <dg, nu>, which stays accurate when
    the increase itself is far below the size of G. Stops when every
    gradient component is within ``tol``; returns normalized potentials.
    """
    if any(s > m for s, m in zip(inst.shape, MAX_SHAPE)):
        raise ValueError(f"oracle limited to shapes up to {MAX_SHAPE}, got {inst.shape}")
    n, m, _ = inst.shape
    mu, nu = inst.mu.weights, inst.nu.weights
    d = inst.displacement
    kern = _kernel(inst)
    if init is None:
        f, g, h = np.zeros(n), np.zeros(m), np.zeros(n)
    else:
        f, g, h = init.f.copy(), init.g.copy(), init.h.copy()

    pxy = _plan_xy(kern, d, f, g, h)
    grad = _gradients(pxy, d, mu, nu)
    step = 1.0
    prev = None
    for _ in range(max_iter):
        gf, gg, gh = grad
        gmax = max(np.abs(gf).max(), np.abs(gg).max(), np.abs(gh).max())
        if gmax <= tol:
            break
        slope = np.dot(mu, gf**2) + np.dot(nu, gg**2) + np.dot(mu, gh**2)
        if prev is not None:
            (sf, sg, sh), (yf, yg, yh) = prev
            ss = np.dot(mu, sf**2) + np.dot(nu, sg**2) + np.dot(mu, sh**2)
            sy = np.dot(mu, sf * yf) + np.dot(nu, sg * yg) + np.dot(mu, sh * yh)
            step = ss / -sy if sy < 0 else 2.0 * step
        while True:
            df, dg, dh = step * gf, step * gg, step * gh
            delta = df[:, None] + dg[None, :] + dh[:, None] * d
            gain = (-math.fsum((pxy * np.expm1(-delta)).ravel())
                    - math.fsum(df * mu) - math.fsum(dg * nu))
            if gain >= c1 * step * slope:
                break
            step *= 0.5
            if step < 1e-30:
                raise NoConvergence("line search collapsed")
        f, g, h = f + df, g + dg, h + dh
        pxy = _plan_xy(kern, d, f, g, h)
        new = _gradients(pxy, d, mu, nu)
        prev = ((df, dg, dh), tuple(a - b for a, b in zip(new, grad)))
        grad = new
    else:
        raise NoConvergence(f"gradient {gmax:.3e} > {tol} after {max_iter} steps")

    lam_g = math.fsum(g * nu)
    lam_h = math.fsum(h * mu)
    c = lam_g + lam_h * inst.nu.mean()
    return DualPotentials(f + c - lam_h * inst.x, g - c + lam_h * inst.y, h - lam_h)


@dataclass
class KktReport:
    martingale: float
    x_marginal: float
    y_marginal: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.martingale, self.x_marginal, self.y_marginal) <= self.tol

    def as_dict(self) -> dict:
        return {"martingale": self.martingale, "x_marginal": self.x_marginal,
                "y_marginal": self.y_marginal, "tol": self.tol, "passed": self.passed}


def check_first_order(inst: ProblemInstance, pot: DualPotentials,
                      tol: float = 1e-8) -> KktReport:
    """First-order conditions of the dual in conditional-density form.

    Reports max_i |E[Y - x_i | x_i]|, max_i |pi_x(i)/mu_i - 1| and
    max_j |pi_y(j)/nu_j - 1| over the supports.
    """
    pxy = _plan_xy(_kernel(inst), inst.displacement, pot.f, pot.g, pot.h)
    gf, gg, gh = _gradients(pxy, inst.displacement, inst.mu.weights, inst.nu.weights)
    return KktReport(float(np.abs(gh).max()), float(np.abs(gf).max()),
                     float(np.abs(gg).max()), tol)


def duality_gap(inst: ProblemInstance, plan, pot: DualPotentials) -> float:
    """H(plan | Q) - (G(pot) + 1).

    With G = -Z - <f, mu> - <g, nu>, the optimum has Z = 1 and
    H(pi* | Q) = G* + 1, so this vanishes at the joint optimum and is
    nonnegative for every feasible probability plan.
    """
    return relative_entropy(plan, inst) - (dual_objective(inst, pot) + 1.0)


def random_instance(seed: int, max_shape=(5, 7, 3)) -> ProblemInstance:
    """Random feasible instance with a fully supported martingale coupling.

    x lies in (-1, 1) and y spans [-2, 2], so y strictly straddles x. Each
    row of the coupling is a Dirichlet draw on the y grid tilted to have
    mean x_i; nu is the resulting y-marginal. Costs are i.i.d. U[-1, 1].
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_shape[0] + 1))
    m = int(rng.integers(3, max_shape[1] + 1))
    ell = int(rng.integers(1, max_shape[2] + 1))
    x = np.sort(rng.uniform(-1.0, 1.0, n))
    while np.any(np.diff(x) < 1e-3):
        x = np.sort(rng.uniform(-1.0, 1.0, n))
    inner = np.sort(rng.uniform(-1.9, 1.9, m - 2))
    y = np.concatenate(([-2.0], inner, [2.0]))
    while np.any(np.diff(y) < 1e-3):
        inner = np.sort(rng.uniform(-1.9, 1.9, m - 2))
        y = np.concatenate(([-2.0], inner, [2.0]))
    mu = rng.dirichlet(np.full(n, 2.0))
    nu = np.zeros(m)
    for i in range(n):
        row = DiscreteMeasure(y, rng.dirichlet(np.full(m, 2.0)))
        nu += mu[i] * match_mean(row, x[i]).weights
    nu /= nu.sum()
    mu_m = DiscreteMeasure(x, mu)
    # tidy the roundoff so the mean check is exact to ~1e-16
    nu_m = match_mean(DiscreteMeasure(y, nu), mu_m.mean())
    z = np.sort(rng.uniform(0.0, 1.0, ell)) + np.arange(ell)
    rho = DiscreteMeasure(z, rng.dirichlet(np.full(ell, 2.0)))
    cost = CostTensor(rng.uniform(-1.0, 1.0, (n, m, ell)))
    return ProblemInstance(mu_m, nu_m, rho, cost)


def small_fixture() -> ProblemInstance:
    """The 2x3x1 instance used throughout the tests and the CLI."""
    mu = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
    nu = DiscreteMeasure([-2.0, 0.0, 2.0], [0.3, 0.4, 0.3])
    rho = DiscreteMeasure([0.15], [1.0])
    cost = CostTensor(np.array([[[0.3], [-0.2], [0.5]], [[-0.4], [0.1], [0.25]]]))
    return ProblemInstance(mu, nu, rho, cost)
