"""Acceptance criteria 1 to 11, each at its stated tolerance."""
import math
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from harnack_lab.cli import RunOptions, run_checks, summary_csv
from harnack_lab.config import bundled_config, load_config
from harnack_lab.drift import (ComposedDrift, CubicKernelDrift, LinearDrift, ReactionDiffusionDrift, ZeroDrift,
                               check_yosida_rates, yosida_resolvent, yosida_window)
from harnack_lab.rng import NoisePlan
from harnack_lab.sde_sim import TimeGrid, coupled_paths
from harnack_lab.spectral_model import build_pair, dirichlet_spectrum, smoothing_constants
from harnack_lab.verify import FAIL, PASS, hypercontractivity_ratio_ou

N = 16
PAIR = build_pair(dirichlet_spectrum(N), 0.5, 1.0)
HARNACK_TYPES = ("harnack_lipschitz", "harnack_dissipative")


def bundled(name, types=None, names=None):
    cfg = load_config(bundled_config(name))
    checks = {k: v for k, v in cfg.checks.items()
              if (types is None or v["type"] in types) and (names is None or k in names)}
    return replace(cfg, checks=checks)


def test_01_ou_oracle_agreement(criterion):
    with criterion(1, "OU oracle: |estimate - closed form| <= 3 stderr, stderr <= 1e-3 (M = 1e5)"):
        reports = run_checks(bundled("ou_suite", ("ou_oracle",)))
        assert sorted(r.details["t"] for r in reports) == [0.25, 1.0, 4.0]
        for r in reports:
            est = r.details["estimate"]
            assert est["M"] == 100_000
            assert abs(est["mean"] - r.details["closed_form"]) <= 3 * est["stderr"], r.details
            assert est["stderr"] <= 1e-3
            assert r.verdict == PASS


def test_02_contraction_exactness(criterion):
    with criterion(2, "contraction: F = 0 coupled difference equals exp(-a_1 t) to 1e-10 (t <= 1)"):
        grid = TimeGrid(1.0, 100)
        e1 = np.eye(N)[0]
        res = coupled_paths(PAIR, ZeroDrift(N), e1, np.zeros(N), grid, NoisePlan(7, 8))
        expected = np.exp(-PAIR.a[0] * grid.times())
        rel = np.abs(res["norm_ratio"] / expected - 1)
        assert rel.max() <= 1e-10, rel.max()


def test_03_smoothing_constant(criterion):
    with criterion(3, "smoothing constant K within 1e-6 of the grid maximum, gamma = alpha/beta"):
        gamma, K = smoothing_constants(PAIR)
        assert gamma == 0.5
        pair64 = build_pair(dirichlet_spectrum(64), 0.5, 1.0)
        t = np.geomspace(1e-4, 10.0, 1_000_001)
        best = 0.0
        for a, c in zip(pair64.a, pair64.c):
            best = max(best, float(np.max(np.exp(-a * t) * t**gamma)) / math.sqrt(c))
        assert abs(K - best) <= 1e-6, (K, best)


def test_04_yosida_root_and_rates(criterion):
    with criterion(4, "Yosida: scalar cubic root within 1e-10; rate and Lipschitz bounds over 1e4 probes"):
        cubic = CubicKernelDrift(1, 1.0, 0.0)
        assert abs(yosida_resolvent(cubic, 1.0, np.array([2.0]))[0] - 1.0) <= 1e-10
        catalogue = [ZeroDrift(N), LinearDrift(N, -0.7), ComposedDrift(PAIR, 1.5), CubicKernelDrift(N, 1.0, 0.5),
                     CubicKernelDrift(N, 2.0, 0.0, profile="constant"), ReactionDiffusionDrift(N, 1.0)]
        y = np.zeros(N)
        y[:4] = [1.5, -1.0, 0.5, 0.25]
        for drift in catalogue:
            deltas = [d for d in (1.0, 0.5, 0.25, 0.125) if d < yosida_window(drift)]
            res = check_yosida_rates(drift, y, deltas, probes=10_000, seed=11)
            assert res["passed"], (drift.name, res["rows"])


def test_05_variational_bound(criterion):
    with criterion(5, "variational flow: |DX y| <= exp(-zeta_X t)|y| (1% tol) and |.|_C <= K1, 100 paths"):
        (r,) = run_checks(bundled("composed", names=("variational",)))
        assert r.details["paths"] == 100
        assert r.details["max_excess"] <= 1.01
        assert r.details["sup_cm_ratio"] <= r.details["K1"]
        assert r.verdict == PASS


def test_06_harnack_master_suite(criterion):
    with criterion(6, "Harnack master grid on F = 0, composed, linear, cubic: no FAIL, >= 90% PASS"):
        reports = []
        for name in ("ou_suite", "composed", "linear", "cubic"):
            got = run_checks(bundled(name, HARNACK_TYPES))
            if name == "ou_suite":
                for r in got:
                    assert r.diagnostics["oracle_lhs_ok"] and r.diagnostics["oracle_rhs_ok"], r.check_id
            reports += got
        verdicts = [r.verdict for r in reports]
        # 24 grid points per regime and config, cubic dissipative only, plus the composed witness
        assert len(reports) == 3 * 24 + 12 + 1
        assert FAIL not in verdicts, [r.check_id for r in reports if r.verdict == FAIL]
        assert verdicts.count(PASS) >= 0.9 * len(verdicts)
        for r in reports:
            assert r.margin + r.lhs.mean == pytest.approx(r.rhs.mean * r.factor, rel=1e-12, abs=1e-15)


def test_07_sensitivity_witness(criterion):
    with criterion(7, "sensitivity: composed witness FAILs with the factor exponent divided by 100"):
        cfg = bundled("composed", names=("witness",))
        (honest,) = run_checks(cfg)
        (sabotaged,) = run_checks(cfg, RunOptions(exponent_scale=0.01))
        assert honest.verdict == PASS
        assert sabotaged.verdict == FAIL


def test_08_galerkin_convergence(criterion):
    with criterion(8, "Galerkin: Cauchy gaps over dims 4, 8, 16, 32 decrease, final gap < 3 CI"):
        (r,) = run_checks(bundled("galerkin"))
        rows = r.details["rows"]
        assert [(row["n_from"], row["n_to"]) for row in rows] == [(4, 8), (8, 16), (16, 32)]
        gaps = [row["gap"] for row in rows]
        assert all(b < a for a, b in zip(gaps, gaps[1:])), gaps
        assert gaps[-1] < 3 * r.ci
        assert r.verdict == PASS


def test_09_generator_consistency(criterion):
    with criterion(9, "generator: error ratios in [1.5, 2.5] over three dt halvings"):
        (r,) = run_checks(bundled("ou_suite", ("generator",)))
        ratios = r.details["ratios"]
        assert len(ratios) == 3
        assert all(1.5 <= q <= 2.5 for q in ratios), ratios


def test_10_hypercontractivity_and_threshold(criterion):
    with criterion(10, "hypercontractivity ratio <= 1 past the OU threshold, > 1 at t = 0; eps* bracketed"):
        cfg = bundled("ou_suite", ("hypercontractivity", "exp_integrability"))
        reports = {r.kind: r for r in run_checks(cfg)}
        hyper = reports["hypercontractivity"]
        t_n = math.log(3) / (2 * PAIR.a[0])
        family = [cfg.observables[name] for name in cfg.checks["hypercontractivity"]["observables"]]
        assert hypercontractivity_ratio_ou(PAIR, family[0], 0.0) > 1
        beyond = [row for row in hyper.details["rows"] if row["t"] >= t_n * (1 - 1e-12)]
        assert len(beyond) == 2 * 4
        for row in beyond:
            assert hypercontractivity_ratio_ou(PAIR, family[row["f"]], row["t"]) <= 1
            assert row["ratio"] <= 1 + 3 * row["se"]
        assert any(row["t"] == 0 and row["ratio"] > 1 for row in hyper.details["rows"])
        assert hyper.verdict == PASS
        assert reports["exp_integrability"].verdict == PASS


def _run_cli(config, out, threads, extra=()):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    subprocess.run([sys.executable, "-m", "harnack_lab.cli", "run", str(config), "--out-dir", str(out), *extra],
                   env=env, check=False, capture_output=True)
    return (out / "summary.csv").read_bytes()


def test_11_determinism_across_threads(criterion, tmp_path):
    with criterion(11, "determinism: byte-identical summary.csv across thread counts and chunk sizes"):
        one = _run_cli("ou_suite", tmp_path / "a", 1)
        two = _run_cli("ou_suite", tmp_path / "b", 2)
        assert one and one == two
        text = bundled_config("cubic").read_text()
        small = tmp_path / "cubic_small_chunk.toml"
        small.write_text(text.replace("[simulation]\ndt = 0.01", "[simulation]\ndt = 0.01\nchunk = 977"))
        a = _run_cli(bundled_config("cubic"), tmp_path / "c", 1, ["--max-paths", "20000"])
        b = _run_cli(small, tmp_path / "d", 2, ["--max-paths", "20000"])
        assert a and a == b
