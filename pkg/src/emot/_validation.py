"""Input coercion helpers for the estimator front end."""

from __future__ import annotations

import numbers

import numpy as np

from .measures import CostTensor, DiscreteMeasure, ProblemInstance


def check_measure(obj, name="measure") -> DiscreteMeasure:
    """Accept a DiscreteMeasure, a ``(points, weights)`` pair or an (n, 2) array."""
    if isinstance(obj, DiscreteMeasure):
        return obj
    if isinstance(obj, tuple) and len(obj) == 2:
        return DiscreteMeasure(*obj)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return DiscreteMeasure(arr[:, 0], arr[:, 1])
    raise TypeError(f"{name}: cannot interpret {type(obj).__name__} as a measure")


def check_problem(X, nu=None, rho=None, cost=None) -> ProblemInstance:
    """Build a ProblemInstance from an instance or from its four parts."""
    if isinstance(X, ProblemInstance):
        if any(a is not None for a in (nu, rho, cost)):
            raise TypeError("pass either a ProblemInstance or mu, nu, rho, cost")
        return X
    if nu is None or cost is None:
        raise TypeError("need mu, nu and cost (rho defaults to a point mass)")
    mu = check_measure(X, "mu")
    nu = check_measure(nu, "nu")
    if not isinstance(cost, CostTensor):
        cost = np.asarray(cost, dtype=float)
        if cost.ndim == 2:
            cost = cost[:, :, None]
        cost = CostTensor(cost)
    rho = DiscreteMeasure([0.0], [1.0]) if rho is None else check_measure(rho, "rho")
    return ProblemInstance(mu, nu, rho, cost)


def check_positive(value, name, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, "
                         f"got {value!r}")
    return value
