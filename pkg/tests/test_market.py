import warnings

import numpy as np
import pytest

from emot import ProblemInstance, reference_measure, validate_instance
from emot.exceptions import (
    DegenerateHistogram,
    FellerViolation,
    InfeasibleSupport,
    MassOutsideGridWarning,
    NonConvexPrices,
)
from emot.market import (
    AxisGrid,
    GridSpec,
    HestonParams,
    NoiseSpec,
    PathSample,
    build_instance,
    build_reference,
    histogram3d,
    implied_marginal_from_calls,
    noised_marginals,
    simulate_heston,
    split_periods,
)
from emot.measures import CostTensor, DiscreteMeasure

SMALL = HestonParams(n_paths=20_000, seed=7)


def test_feller_boundary():
    with pytest.raises(FellerViolation):
        HestonParams(lam=1.0, v_bar=0.15, eta=0.8)
    assert HestonParams(lam=1.0, v_bar=0.15, eta=0.05).feller_ratio == pytest.approx(120.0)
    assert HestonParams(eta=0.0).feller_ratio == np.inf


def test_param_validation():
    with pytest.raises(ValueError):
        HestonParams(n_paths=0)
    with pytest.raises(ValueError):
        HestonParams(t1=0.3, t2=0.2)


def test_simulation_is_seeded_and_thread_independent():
    a = simulate_heston(SMALL, block_size=4096)
    b = simulate_heston(SMALL, threads=4, block_size=4096)
    c = simulate_heston(HestonParams(n_paths=20_000, seed=8), block_size=4096)
    np.testing.assert_array_equal(a.s2, b.s2)
    np.testing.assert_array_equal(a.v1, b.v1)
    assert not np.array_equal(a.s2, c.s2)
    assert np.all(a.s1 > 0) and np.all(a.v1 >= 0)


def test_zero_vol_of_vol_is_deterministic_variance():
    # with eta = 0 and v0 = v_bar the variance never moves
    sample = simulate_heston(HestonParams(eta=0.0, n_paths=1000))
    np.testing.assert_allclose(sample.v1, 0.15, rtol=1e-14)


def test_axis_grid_clips_and_counts():
    ax = AxisGrid(0.0, 10.0, 5)
    np.testing.assert_allclose(ax.centers, [1, 3, 5, 7, 9])
    idx, outside = ax.cell_index(np.array([-1.0, 0.0, 3.9, 10.0, 12.0]))
    assert list(idx) == [0, 0, 1, 4, 4]
    assert outside == 2


def test_build_reference_reproduces_histogram():
    sample = simulate_heston(SMALL)
    grids = GridSpec()
    cost, (mu, nu, rho) = build_reference(sample, grids)
    counts = histogram3d(sample, grids)
    q = counts / counts.sum()
    ref = reference_measure(ProblemInstance(mu, nu, rho, cost))
    np.testing.assert_allclose(ref[counts > 0], q[counts > 0], rtol=1e-12)
    assert np.all(cost.values[counts == 0] == 30.0)


def test_degenerate_histogram():
    s = np.full(10, 5000.0)
    sample = PathSample(s, s, np.full(10, 0.15))
    with pytest.raises(DegenerateHistogram):
        build_reference(sample)


def test_noised_marginals_warn_when_mass_leaves_grid():
    sample = simulate_heston(SMALL)
    narrow = GridSpec(AxisGrid(4800, 5200, 8), AxisGrid(4700, 5300, 10),
                      AxisGrid(0.14, 0.16, 4))
    with pytest.warns(MassOutsideGridWarning):
        noised_marginals(sample, grids=narrow)
    with pytest.warns(MassOutsideGridWarning):
        mu, nu, rho = noised_marginals(sample, noise=NoiseSpec(0.0, 0.0, 0.0))
    clean = build_reference(sample)[1]
    np.testing.assert_allclose(mu.weights, clean[0].weights)
    np.testing.assert_allclose(nu.weights, clean[1].weights)


def test_build_instance_is_valid():
    sample = simulate_heston(SMALL)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MassOutsideGridWarning)
        inst = build_instance(sample)
    assert inst.shape == (40, 50, 5)
    assert inst.nu.mean() == pytest.approx(inst.mu.mean(), abs=1e-9)
    assert validate_instance(inst).ok


def test_implied_marginal_round_trip():
    pts = np.array([1.0, 2.0, 4.0])
    w = np.array([0.2, 0.5, 0.3])
    strikes = np.arange(0.0, 6.0, 1.0)
    calls = np.array([np.dot(w, np.maximum(pts - k, 0)) for k in strikes])
    m = implied_marginal_from_calls(strikes, calls)
    np.testing.assert_array_equal(m.points, strikes[1:-1])
    np.testing.assert_allclose(m.weights, [0.2, 0.5, 0.0, 0.3], atol=1e-15)


def test_implied_marginal_rejects_arbitrage():
    with pytest.raises(NonConvexPrices):
        implied_marginal_from_calls([0, 1, 2, 3], [3.0, 2.0, 1.5, 0.5])
    with pytest.raises(ValueError):
        implied_marginal_from_calls([0, 1, 3], [3.0, 2.0, 1.0])


def _unit_reference(i, a, b):
    return DiscreteMeasure([0.0], [1.0]), CostTensor.zeros((len(a), len(b), 1))


def test_split_periods():
    m0 = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
    m1 = DiscreteMeasure([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])
    m2 = DiscreteMeasure([-3.0, 0.0, 3.0], [0.25, 0.5, 0.25])
    insts = split_periods([m0, m1, m2], _unit_reference)
    assert [i.shape for i in insts] == [(2, 3, 1), (3, 3, 1)]
    with pytest.raises(InfeasibleSupport) as err:
        split_periods([m0, m1, m1], _unit_reference)
    assert err.value.period == 1
    with pytest.raises(ValueError):
        split_periods([m0], _unit_reference)
