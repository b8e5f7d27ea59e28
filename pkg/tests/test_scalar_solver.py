import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from emot.exceptions import BracketFailure
from emot.scalar_solver import RootProblem, phi, phi_prime, solve_h, solve_rows


def bisect_root(w, d, lo=-50.0, hi=50.0):
    """Independent reference: plain bisection on the raw sum."""
    def raw(h):
        return sum(wj * dj * math.exp(-h * dj) for wj, dj in zip(w, d) if wj > 0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if raw(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_two_point_root_closed_form():
    prob = RootProblem(np.array([0.5, 0.5]), np.array([-1.0, 2.0]))
    h = solve_h(prob)
    assert h == pytest.approx(math.log(2.0) / 3.0, abs=1e-12)
    assert h == pytest.approx(bisect_root([0.5, 0.5], [-1.0, 2.0]), abs=1e-12)
    assert abs(phi(prob, h)) <= 1e-12


def test_quadratic_row_closed_form():
    # d = (-1, 1, 3): with r = exp(-2h) the condition is -w0 + w1 r + 3 w2 r^2 = 0
    w = np.array([0.2, 0.5, 0.3])
    d = np.array([-1.0, 1.0, 3.0])
    r = (-w[1] + math.sqrt(w[1] ** 2 + 12 * w[0] * w[2])) / (6 * w[2])
    h = solve_h(RootProblem(w, d))
    assert h == pytest.approx(-0.5 * math.log(r), abs=1e-12)


def test_zero_weights_are_ignored():
    prob = RootProblem(np.array([0.5, 0.0, 0.5]), np.array([-1.0, 5.0, 2.0]))
    assert solve_h(prob) == pytest.approx(math.log(2.0) / 3.0, abs=1e-12)


def test_no_sign_change_raises():
    with pytest.raises(BracketFailure):
        solve_h(RootProblem(np.array([0.5, 0.5]), np.array([1.0, 2.0])))
    with pytest.raises(BracketFailure):
        solve_h(RootProblem(np.array([0.0, 1.0]), np.array([-1.0, 2.0])))


def test_bracket_limit_raises():
    # log-weights (0, -1e7) put the root at h = 5e6, beyond the bracket limit
    with pytest.raises(BracketFailure) as err:
        solve_rows(np.array([[0.0, -1e7]]), np.array([[1.0, -1.0]]))
    assert err.value.row == 0


def test_rows_solved_independently():
    rng = np.random.default_rng(3)
    d = np.sort(rng.uniform(-2, 2, (6, 5)), axis=1)
    d[:, 0], d[:, -1] = -1.0, 1.5
    w = rng.dirichlet(np.ones(5), size=6)
    together = solve_rows(np.log(w), d)
    alone = [solve_h(RootProblem(w[i], d[i])) for i in range(6)]
    np.testing.assert_allclose(together, alone, atol=1e-12)


def test_warm_start_gives_same_root():
    prob = RootProblem(np.array([0.3, 0.3, 0.4]), np.array([-2.0, 0.5, 1.0]))
    assert solve_h(prob, h0=17.0) == pytest.approx(solve_h(prob), abs=1e-12)


def test_phi_prime_matches_finite_difference():
    prob = RootProblem(np.array([0.2, 0.3, 0.5]), np.array([-1.5, 0.4, 2.0]))
    eps = 1e-6
    fd = (phi(prob, 0.3 + eps) - phi(prob, 0.3 - eps)) / (2 * eps)
    assert phi_prime(prob, 0.3) == pytest.approx(fd, rel=1e-7)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8),
    st.lists(st.floats(-100.0, 100.0), min_size=2, max_size=8),
)
def test_root_property(weights, disp):
    n = min(len(weights), len(disp))
    w = np.array(weights[:n])
    d = np.array(disp[:n])
    assume(d.max() > 1e-3 and d.min() < -1e-3)
    prob = RootProblem(w / w.sum(), d)
    h = solve_h(prob)
    scale = np.abs(d).max()
    # tilted mean vanishes at the root, and phi is decreasing through it
    assert abs(phi(prob, h)) <= 1e-9 * scale
    assert phi_prime(prob, h) < 0
