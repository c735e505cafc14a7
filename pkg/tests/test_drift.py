import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from harnack_lab.drift import (BasisTransform, ComposedDrift, CubicKernelDrift, LinearDrift,
                               ReactionDiffusionDrift, YosidaWrapped, ZeroDrift, check_dissipativity,
                               check_yosida_rates, cubic_u_profile, yosida_drift, yosida_resolvent,
                               yosida_window)
from harnack_lab.spectral_model import build_pair, dirichlet_spectrum

PAIR = build_pair(dirichlet_spectrum(8), 0.5, 1.0)


def catalogue():
    return [ZeroDrift(8), LinearDrift(8, -0.7), ComposedDrift(PAIR, 1.5),
            CubicKernelDrift(8, 1.0, 0.5), CubicKernelDrift(8, 2.0, 0.0, profile="constant"),
            ReactionDiffusionDrift(8, 1.0), ReactionDiffusionDrift(8, 0.5, "cubic_linear")]


def test_eval_examples():
    x = np.arange(1.0, 9.0)
    assert not np.any(ZeroDrift(8).eval(x))
    np.testing.assert_array_equal(LinearDrift(8, -0.7).eval(x), -0.7 * x)
    cubic = CubicKernelDrift(3, 1.0, 0.0)
    np.testing.assert_allclose(cubic.eval([2.0, 0, 0]), [-8.0, 0, 0], rtol=1e-15)


def test_cubic_kernel_quadrature_oracle():
    # P3(f) = -kappa <u, f>^3 u with u the constant-one profile in sine coordinates.
    n = 12
    drift = CubicKernelDrift(n, 1.5, 0.0, profile="constant")
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n) / np.arange(1, n + 1)
    xi = np.linspace(0, 1, 20001)
    basis = math.sqrt(2) * np.sin(np.pi * np.outer(xi, np.arange(1, n + 1)))
    f = basis @ x
    inner = trapezoid(f, xi)  # <1, f> over [0, 1]
    expected = -1.5 * inner**3 * drift.u
    np.testing.assert_allclose(drift.eval(x), expected, atol=1e-6)
    u = cubic_u_profile(4, "constant")
    np.testing.assert_allclose(u, [2 * math.sqrt(2) / math.pi, 0, 2 * math.sqrt(2) / (3 * math.pi), 0])


def test_jacobian_examples():
    h = np.arange(1.0, 9.0)
    assert not np.any(ZeroDrift(8).jacobian_action(h, h))
    np.testing.assert_allclose(LinearDrift(8, 0.3).jacobian_action(h, h), 0.3 * h)
    cubic = CubicKernelDrift(3, 1.0, 0.0)
    np.testing.assert_allclose(cubic.jacobian_action([2.0, 0, 0], [1.0, 0, 0]), [-12.0, 0, 0], rtol=1e-14)


@pytest.mark.parametrize("drift", catalogue(), ids=lambda d: d.name)
def test_jacobian_matches_finite_differences(drift):
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, 8)
    h = rng.standard_normal(8)
    eps = 1e-6
    fd = (drift.eval(x + eps * h) - drift.eval(x - eps * h)) / (2 * eps)
    np.testing.assert_allclose(drift.jacobian_action(x, h), fd, atol=1e-6 * (1 + np.abs(fd).max()))
    np.testing.assert_allclose(drift.jacobian_matrix(x) @ h, drift.jacobian_action(x, h), atol=1e-10)


@pytest.mark.parametrize("drift", catalogue(), ids=lambda d: d.name)
def test_catalogue_dissipativity(drift):
    res = check_dissipativity(drift, drift.zeta_F, trials=5000, seed=3)
    assert res["passed"], res["max_violation"]


def test_dissipativity_detects_violation():
    assert check_dissipativity(ZeroDrift(4), 0.0)["max_violation"] <= 0
    res = check_dissipativity(LinearDrift(4, 0.5), 0.4, trials=2000)
    assert not res["passed"]
    x, y = map(np.asarray, res["worst_pair"])
    assert res["max_violation"] == pytest.approx(0.1 * np.sum((x - y) ** 2), rel=1e-9)


def test_cubic_dissipative_in_cm_norm_for_mode_profile():
    drift = CubicKernelDrift(8, 1.0, 0.5)
    assert check_dissipativity(drift, 0.5, pair=PAIR, trials=5000)["passed"]


def test_basis_transform_round_trip():
    rng = np.random.default_rng(2)
    for size, n in [(33, 16), (65, 16), (32, 32)]:
        b = BasisTransform(size, n)
        c = rng.standard_normal((5, n))
        np.testing.assert_allclose(b.to_spectral(b.to_grid(c)), c, atol=1e-12)
        # discrete Parseval
        v = b.to_grid(c)
        np.testing.assert_allclose(np.sum(v * v, axis=-1) / (size + 1), np.sum(c * c, axis=-1), rtol=1e-12)
    with pytest.raises(ValueError):
        BasisTransform(4, 8)


def test_yosida_scalar_cubic_exact_root():
    cubic = CubicKernelDrift(1, 1.0, 0.0)
    J = yosida_resolvent(cubic, 1.0, np.array([2.0]))
    assert abs(J[0] - 1.0) <= 1e-10
    assert yosida_drift(cubic, 1.0, np.array([2.0]))[0] == pytest.approx(-1.0, abs=1e-10)


def test_yosida_trivial_cases():
    x = np.arange(1.0, 9.0)
    np.testing.assert_array_equal(yosida_resolvent(LinearDrift(8, -0.7), 0.3, x), x)
    np.testing.assert_array_equal(yosida_resolvent(ZeroDrift(8), 0.3, x), x)
    np.testing.assert_allclose(yosida_drift(LinearDrift(8, -0.7), 0.3, x), -0.7 * x)


def test_yosida_window_enforced():
    d = CubicKernelDrift(4, 1.0, 0.5)
    assert yosida_window(d) == 2.0
    with pytest.raises(ValueError):
        yosida_resolvent(d, 2.5, np.ones(4))
    with pytest.raises(ValueError):
        YosidaWrapped(d, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=8, max_size=8), st.sampled_from([0.05, 0.3, 1.0]))
def test_yosida_resolvent_solves_equation(x, delta):
    x = np.asarray(x)
    for drift in (CubicKernelDrift(8, 2.0, 0.0, profile="constant"), ReactionDiffusionDrift(8, 1.0),
                  ComposedDrift(PAIR, 1.5)):
        if not delta < yosida_window(drift):
            continue
        y = yosida_resolvent(drift, delta, x)
        res = y - delta * (drift.eval(y) - drift.zeta_F * y) - x
        assert np.linalg.norm(res) <= 1e-10


def test_yosida_drift_converges_as_delta_shrinks():
    drift = CubicKernelDrift(8, 1.0, 0.5)
    y = np.array([2.0, -1.0, 0.5, 0, 0, 0, 0, 0])
    errs = [np.linalg.norm(yosida_drift(drift, d, y) - drift.eval(y)) for d in (1.0, 0.5, 0.25, 0.125, 0.0625)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_yosida_rates_scalar_example():
    cubic = CubicKernelDrift(1, 1.0, 0.0)
    res = check_yosida_rates(cubic, np.array([2.0]), [1.0], M=1.0, m=3, probes=1000)
    row = res["rows"][0]
    assert row["jump"] == pytest.approx(1.0, abs=1e-10)
    assert row["jump_bound"] == pytest.approx(1.0 + 8.0)
    assert res["passed"]


@pytest.mark.parametrize("drift", catalogue()[1:], ids=lambda d: d.name)
def test_yosida_rates_hold_for_catalogue(drift):
    y = np.linspace(1.5, -1.0, 8)
    deltas = [d for d in (1.0, 0.5, 0.25, 0.125) if d < yosida_window(drift)]
    res = check_yosida_rates(drift, y, deltas, probes=2000, seed=5)
    assert res["passed"], res["rows"]


def test_yosida_wrapped_jacobian():
    base = CubicKernelDrift(8, 2.0, 0.5, profile="constant")
    w = YosidaWrapped(base, 0.2)
    rng = np.random.default_rng(4)
    x, h = rng.uniform(-2, 2, 8), rng.standard_normal(8)
    eps = 1e-6
    fd = (w.eval(x + eps * h) - w.eval(x - eps * h)) / (2 * eps)
    np.testing.assert_allclose(w.jacobian_action(x, h), fd, atol=1e-6)
    assert w.lipschitz == pytest.approx(2 / 0.2 + 0.5)


def test_truncation_preserves_leading_block():
    drift = CubicKernelDrift(16, 1.0, 0.0, profile="constant")
    small = drift.truncate(4)
    x = np.zeros(16)
    x[:4] = [0.5, -0.2, 0.1, 0.3]
    np.testing.assert_allclose(small.eval(x[:4]), drift.eval(x)[:4], rtol=1e-14)
    assert small.n == 4
    np.testing.assert_array_equal(small.u, drift.u[:4])


def test_reaction_diffusion_effective_zeta():
    d = ReactionDiffusionDrift(8, 1.2)
    assert d.zeta_F == pytest.approx(1.2**2 / 12)
    # the pointwise map s -> phi(s) - (coeff/2) s^2 is one-sided Lipschitz with that constant
    s = np.linspace(-5, 5, 2001)
    g = d.phi(s) - 0.6 * s**2
    slopes = np.diff(g) / np.diff(s)
    assert slopes.max() <= d.zeta_F + 1e-9
