import math

import numpy as np
import pytest
from scipy import stats

from harnack_lab.drift import ComposedDrift, CubicKernelDrift, LinearDrift, ZeroDrift
from harnack_lab.rng import NoisePlan
from harnack_lab.sde_sim import (TimeGrid, coupled_paths, export_ensemble, load_ensemble, ou_exact_sample,
                                 simulate_endpoints, simulate_ensemble, step_coefficients,
                                 step_exponential, variational_flow)
from harnack_lab.spectral_model import build_pair, dirichlet_spectrum, explicit_spectrum, lipschitz_constants

PAIR = build_pair(dirichlet_spectrum(8), 0.5, 1.0)


def test_time_grid():
    g = TimeGrid(1.0, 100)
    assert g.dt == 0.01
    assert g.times()[-1] == pytest.approx(1.0)
    assert g.step_at(0.25) == 25
    with pytest.raises(ValueError):
        g.step_at(0.255)
    assert TimeGrid.with_dt(0.5, 0.01).steps == 50


def test_step_pure_decay_and_small_rate_limit():
    x = np.arange(1.0, 9.0)
    out = step_exponential(PAIR, ZeroDrift(8), x, 0.01, np.zeros(8))
    np.testing.assert_allclose(out, np.exp(-PAIR.a * 0.01) * x, rtol=1e-15)
    tiny = build_pair(explicit_spectrum([1e12]), 0.0, 1.0)  # a ~ 5e-13
    _, psi, _ = step_coefficients(tiny, 0.1)
    assert psi[0] == pytest.approx(0.1, rel=1e-10)


def test_step_linear_drift_second_order():
    one = build_pair(explicit_spectrum([0.5]), 0.0, 1.0)  # a = 1
    drift = LinearDrift(1, -0.5)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        step = step_exponential(one, drift, [1.0], dt, [0.0])[0]
        errs.append(abs(step - math.exp(-1.5 * dt)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_zero_drift_moments_match_ou():
    x0 = np.linspace(1.0, 0.2, 8)
    ens = simulate_ensemble(PAIR, ZeroDrift(8), x0, TimeGrid(0.2, 20), NoisePlan(3, 100_000), record=[0.2])
    X = ens.endpoints
    mean = np.exp(-PAIR.a * 0.2) * x0
    var = PAIR.ou_variance(0.2)
    se = np.sqrt(var / len(X))
    assert np.all(np.abs(X.mean(axis=0) - mean) <= 4 * se)
    se_var = var * math.sqrt(2 / (len(X) - 1))
    assert np.all(np.abs(X.var(axis=0, ddof=1) - var) <= 4 * se_var)


def test_determinism_and_chunk_invariance():
    drift = CubicKernelDrift(8, 1.0, 0.5)
    grid = TimeGrid(0.5, 50)
    plan = NoisePlan(17, 1000)
    a, _ = simulate_endpoints(PAIR, drift, np.ones((1, 8)), grid, plan, record=[0.5])
    b, _ = simulate_endpoints(PAIR, drift, np.ones((1, 8)), grid, plan, record=[0.5], chunk=137)
    np.testing.assert_array_equal(a, b)


def test_refinement_is_exact_in_distribution_for_zero_drift():
    plan = NoisePlan(21, 20_000)
    x0 = np.full(8, 0.5)
    coarse = simulate_ensemble(PAIR, ZeroDrift(8), x0, TimeGrid(0.3, 3), plan, record=[0.3]).endpoints
    fine = simulate_ensemble(PAIR, ZeroDrift(8), x0, TimeGrid(0.3, 6), plan.with_stream(4),
                             record=[0.3]).endpoints
    assert stats.ks_2samp(coarse[:, 0], fine[:, 0]).pvalue > 1e-3


def test_coupled_paths_zero_drift_exact():
    grid = TimeGrid(1.0, 100)
    e1 = np.eye(8)[0]
    res = coupled_paths(PAIR, ZeroDrift(8), e1, np.zeros(8), grid, NoisePlan(1, 4), zeta_X_lip=PAIR.a[0])
    expected = np.exp(-PAIR.a[0] * grid.times())
    assert np.max(np.abs(res["norm_ratio"] / expected - 1)) <= 1e-10
    assert res["norm_ratio"][0, 0] == 1.0
    assert res["flow_mismatch"] < 1e-14


def test_coupled_paths_linear_drift_rate():
    grid = TimeGrid(1.0, 100)
    e1 = np.eye(8)[0]
    res = coupled_paths(PAIR, LinearDrift(8, -0.5), e1, np.zeros(8), grid, NoisePlan(1, 2))
    decay, psi, _ = step_coefficients(PAIR, grid.dt)
    per_step = decay[0] - 0.5 * psi[0]
    np.testing.assert_allclose(res["norm_ratio"][0], per_step ** np.arange(101), rtol=1e-12)
    np.testing.assert_allclose(res["norm_ratio"][0], np.exp((-PAIR.a[0] - 0.5) * grid.times()), rtol=2e-2)


def test_variational_flow_linear_cases():
    grid = TimeGrid(1.0, 100)
    y0 = np.linspace(1, -1, 8)
    base = np.zeros((101, 8))
    res = variational_flow(PAIR, ZeroDrift(8), base, y0, grid)
    np.testing.assert_allclose(res["Y"][-1], np.exp(-PAIR.a) * y0, rtol=1e-12)
    res = variational_flow(PAIR, LinearDrift(8, 0.3), base, y0, grid)
    decay, psi, _ = step_coefficients(PAIR, grid.dt)
    np.testing.assert_allclose(res["Y"][-1], (decay + 0.3 * psi) ** 100 * y0, rtol=1e-12)
    assert res["Y"][-1][0] == pytest.approx(math.exp(-PAIR.a[0] + 0.3) * y0[0], rel=1e-2)


def test_variational_bound_composed_drift():
    drift = ComposedDrift(PAIR, 3.0)
    const = lipschitz_constants(PAIR, L_G=3.0, case="composed")
    grid = TimeGrid(1.0, 1000)
    states, _ = simulate_endpoints(PAIR, drift, 0.5 * np.ones(8), grid, NoisePlan(2, 20))
    res = variational_flow(PAIR, drift, states[0], np.eye(8)[0], grid, const.zeta_X_lip, const.K1)
    assert res["max_excess"] <= 1.01
    assert res["sup_cm_ratio"] <= const.K1


def test_ou_exact_sample():
    x0 = np.linspace(1, 0, 8)
    plan = NoisePlan(5, 100_000)
    np.testing.assert_array_equal(ou_exact_sample(PAIR, x0, 0.0, plan)[0], x0)
    X = ou_exact_sample(PAIR, x0, 0.3, plan)
    var = PAIR.ou_variance(0.3)
    assert np.all(np.abs(X.mean(axis=0) - np.exp(-PAIR.a * 0.3) * x0) <= 4 * np.sqrt(var / len(X)))
    far = ou_exact_sample(PAIR, x0, 50.0, plan)
    np.testing.assert_allclose(far.var(axis=0), PAIR.invariant_variance, rtol=0.02)


def test_export_round_trip(tmp_path):
    ens = simulate_ensemble(PAIR, CubicKernelDrift(8, 1.0, 0.5), np.ones(8), TimeGrid(0.1, 10),
                            NoisePlan(9, 50))
    export_ensemble(ens, tmp_path)
    back = load_ensemble(tmp_path)
    np.testing.assert_array_equal(back.states, ens.states)
    np.testing.assert_array_equal(back.times, ens.times)
    assert back.provenance == ens.provenance
    assert (tmp_path / "mode_001.bin").stat().st_size == 50 * 11 * 8
    np.testing.assert_array_equal(back.at(0.05), ens.states[:, 5])


def test_drift_implicit_scheme_runs_and_stays_close():
    drift = CubicKernelDrift(8, 5.0, 0.0, profile="constant")
    grid = TimeGrid(0.2, 40)
    plan = NoisePlan(4, 2000)
    x0 = np.full((1, 8), 0.5)
    a, _ = simulate_endpoints(PAIR, drift, x0, grid, plan, "exponential", record=[0.2])
    b, _ = simulate_endpoints(PAIR, drift, x0, grid, plan, "drift_implicit", record=[0.2])
    assert np.max(np.abs(a - b)) < 0.05
