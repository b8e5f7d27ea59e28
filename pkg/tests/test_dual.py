import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from emot import (
    DiscreteMeasure,
    ProblemInstance,
    DualPotentials,
    apply_invariant_transform,
    dual_objective,
    induced_plan,
    normalize,
    reference_measure,
    relative_entropy,
)
from emot.dual import plan_from_array
from emot.exceptions import NotAbsolutelyContinuous, Overflow
from emot.oracle import small_fixture

# a hand-built martingale coupling of the fixture marginals
FEASIBLE_PLAN = np.array([[0.30, 0.15, 0.05], [0.00, 0.25, 0.25]])[:, :, None]

finite = st.floats(-3.0, 3.0, allow_nan=False)


def potentials(n=2, m=3):
    return st.builds(
        DualPotentials,
        arrays(float, n, elements=finite),
        arrays(float, m, elements=finite),
        arrays(float, n, elements=st.floats(-1.0, 1.0)),
    )


def test_zero_potentials_give_reference_mass():
    inst = small_fixture()
    G = dual_objective(inst, DualPotentials.zeros(2, 3))
    assert G == pytest.approx(-reference_measure(inst).sum(), abs=1e-15)
    plan = induced_plan(inst, DualPotentials.zeros(2, 3))
    np.testing.assert_allclose(plan.pi, reference_measure(inst), rtol=1e-15)


def test_feasible_plan_is_a_martingale_coupling():
    inst = small_fixture()
    plan = plan_from_array(inst, FEASIBLE_PLAN)
    assert plan.x_marginal_error == pytest.approx(0.0, abs=1e-15)
    assert plan.y_marginal_error == pytest.approx(0.0, abs=1e-15)
    assert plan.max_relative_residual == pytest.approx(0.0, abs=1e-15)


def test_relative_entropy_of_reference_is_zero():
    inst = small_fixture()
    assert relative_entropy(reference_measure(inst), inst) == pytest.approx(0.0, abs=1e-15)
    # nu puts no mass at y = 0, so Q vanishes on that column
    nu = DiscreteMeasure(inst.y, [0.5, 0.0, 0.5])
    holes = ProblemInstance(inst.mu, nu, inst.rho, inst.cost)
    with pytest.raises(NotAbsolutelyContinuous):
        relative_entropy(FEASIBLE_PLAN, holes)


def test_overflow_guard():
    inst = small_fixture()
    pot = DualPotentials([-800.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0])
    with pytest.raises(Overflow):
        induced_plan(inst, pot)


@settings(max_examples=200, deadline=None)
@given(potentials())
def test_weak_duality(pot):
    # H(pi | Q) >= G + 1 for every martingale coupling pi and every potential
    inst = small_fixture()
    H = relative_entropy(FEASIBLE_PLAN, inst)
    assert H >= dual_objective(inst, pot) + 1.0 - 1e-12


@settings(max_examples=200, deadline=None)
@given(potentials(), finite, st.floats(-1.0, 1.0))
def test_invariant_transform_preserves_plan_and_objective(pot, c1, c2):
    inst = small_fixture()  # mean(mu) = mean(nu) = 0
    moved = apply_invariant_transform(pot, c1, c2, inst.x, inst.y)
    np.testing.assert_allclose(induced_plan(inst, moved).pi, induced_plan(inst, pot).pi,
                               rtol=1e-12, atol=1e-300)
    assert dual_objective(inst, moved) == pytest.approx(dual_objective(inst, pot), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(potentials())
def test_normalize_properties(pot):
    inst = small_fixture()
    out = normalize(pot, inst.mu, inst.nu)
    assert out.is_normalized(inst.mu, inst.nu)
    again = normalize(out, inst.mu, inst.nu)
    np.testing.assert_allclose(again.f, out.f, atol=1e-12)
    np.testing.assert_allclose(again.g, out.g, atol=1e-12)
    np.testing.assert_allclose(again.h, out.h, atol=1e-12)
    assert dual_objective(inst, out) == pytest.approx(dual_objective(inst, pot), abs=1e-12)


def test_normalize_uncentered_grid():
    inst = small_fixture()
    shifted = inst.__class__(inst.mu.shifted(7.0), inst.nu.shifted(7.0), inst.rho, inst.cost)
    pot = DualPotentials([0.3, -0.1], [0.2, 0.5, -0.4], [0.7, 0.1])
    out = normalize(pot, shifted.mu, shifted.nu)
    assert out.is_normalized(shifted.mu, shifted.nu)
    np.testing.assert_allclose(induced_plan(shifted, out).pi,
                               induced_plan(shifted, pot).pi, rtol=1e-12)
