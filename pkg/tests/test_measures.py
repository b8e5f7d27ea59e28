import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emot import (
    CostTensor,
    DiscreteMeasure,
    ProblemInstance,
    center_means,
    check_instance,
    reference_measure,
    reference_measure_density,
    validate_instance,
)
from emot.exceptions import ConvexOrderWarning, DegenerateNu, InfeasibleSupport, MeanMismatch
from emot.measures import convex_order_defect, match_mean, uncenter
from emot.oracle import random_instance

from conftest import make_instance


def test_measure_invariants():
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure([0.0, 1.0], [1.2, -0.2])
    m = DiscreteMeasure([0.0, 1.0, 2.0], [0.0, 0.5, 0.5])
    assert m.lower == 1.0 and m.upper == 2.0
    assert not m.points.flags.writeable


def test_cost_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        CostTensor(np.full((1, 1, 1), np.inf))
    assert CostTensor(np.array([[[1.0, -3.0]]])).sup_norm == 3.0


def test_table_grids_straddle():
    x = 3400 + 75 * (np.arange(40) + 0.5)
    y = 3200 + 70 * (np.arange(50) + 0.5)
    assert x[0] == 3437.5 and x[-1] == 6362.5
    assert y[0] == 3235.0 and y[-1] == 6665.0
    inst = make_instance(x, np.full(40, 1 / 40), y, match_mean(
        DiscreteMeasure(y, np.full(50, 1 / 50)), x.mean()).weights)
    report = validate_instance(inst)
    assert report.straddle_ok


def test_identical_measures_fail_straddle():
    x = [-1.0, 0.0, 1.0]
    w = [0.25, 0.5, 0.25]
    inst = make_instance(x, w, x, w)
    with pytest.raises(InfeasibleSupport) as err:
        validate_instance(inst)
    assert not err.value.report.straddle_ok


def test_small_example_passes_all_checks():
    inst = make_instance([-1.0, 1.0], [0.5, 0.5], [-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])
    report = validate_instance(inst)
    assert report.ok and report.convex_order_ok
    # enumerate (y - k)^+ and (x - k)^+ at every grid point by hand
    for k in (-2.0, -1.0, 0.0, 1.0, 2.0):
        cx = 0.5 * max(-1 - k, 0) + 0.5 * max(1 - k, 0)
        cy = 0.25 * max(-2 - k, 0) + 0.5 * max(0 - k, 0) + 0.25 * max(2 - k, 0)
        assert cy >= cx
    assert convex_order_defect(inst.mu, inst.nu) == pytest.approx(0.0, abs=1e-15)


def test_mean_mismatch_and_degenerate():
    inst = make_instance([-1.0, 1.0], [0.5, 0.5], [-2.0, 0.0, 2.0], [0.2, 0.5, 0.3])
    with pytest.raises(MeanMismatch):
        validate_instance(inst)
    inst = make_instance([0.0], [1.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 0.0])
    with pytest.raises(DegenerateNu):
        validate_instance(inst)


def test_convex_order_violation_only_warns():
    # mu wider than nu: means match, straddle holds, convex order fails
    inst = make_instance([-1.0, 1.0], [0.5, 0.5], [-2.0, 0.0, 2.0], [0.05, 0.9, 0.05])
    with pytest.warns(ConvexOrderWarning):
        report = validate_instance(inst)
    assert report.convex_order_ok is False
    assert check_instance(inst).convex_order_violation > 0


def test_center_means_translation():
    inst = make_instance([4990.0, 5010.0], [0.5, 0.5], [4980.0, 5000.0, 5020.0],
                         [0.3, 0.4, 0.3])
    centered, shift = center_means(inst)
    assert shift == 5000.0
    assert centered.mu.mean() == 0.0
    np.testing.assert_array_equal(centered.cost.values, inst.cost.values)
    np.testing.assert_array_equal(centered.rho.points, inst.rho.points)
    again, shift2 = center_means(centered)
    assert again is centered and shift2 == 0.0
    restored = uncenter(centered, shift)
    np.testing.assert_array_equal(restored.x, inst.x)
    np.testing.assert_array_equal(restored.y, inst.y)


def test_center_already_centered_is_identity():
    inst = make_instance([-1.0, 1.0], [0.5, 0.5], [-2.0, 0.0, 2.0], [0.3, 0.4, 0.3])
    out, shift = center_means(inst)
    assert out is inst and shift == 0.0


def test_reference_density_examples():
    inst = make_instance([-1.0, 1.0], [0.5, 0.5], [-2.0, 0.0, 2.0], [0.3, 0.4, 0.3])
    assert reference_measure_density(inst, 1, 2, 0) == 0.5 * 0.3
    ones = ProblemInstance(inst.mu, inst.nu, inst.rho, CostTensor(np.ones((2, 3, 1))))
    assert reference_measure(ones).sum() == pytest.approx(np.exp(-1.0), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_reference_mass_bounded_by_cost(seed):
    inst = random_instance(seed)
    total = reference_measure(inst).sum()
    c = inst.cost.sup_norm
    assert np.exp(-c) - 1e-15 <= total <= np.exp(c) + 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_validated_supports_strictly_inside(seed):
    inst = random_instance(seed)
    validate_instance(inst)
    x = inst.x[inst.mu.support]
    assert np.all((inst.nu.lower < x) & (x < inst.nu.upper))


def test_match_mean_hits_target():
    m = DiscreteMeasure(np.linspace(0, 10, 11), np.full(11, 1 / 11))
    out = match_mean(m, 6.3)
    assert out.mean() == pytest.approx(6.3, abs=1e-12)
    assert np.all(out.weights > 0)
    with pytest.raises(ValueError):
        match_mean(m, 10.0)
