"""Monte Carlo verification of the Harnack-type inequalities and convergence statements.

Every inequality check compares ``lhs <= rhs * factor`` with both sides
estimated from the same paths (common random numbers).  The verdict uses a
one-sided z-test on ``margin = rhs * factor - lhs`` whose standard error comes
from the per-path linearisation of the margin (delta method).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .drift import (ComposedDrift, CubicKernelDrift, Drift, LinearDrift, ReactionDiffusionDrift,
                    YosidaWrapped, ZeroDrift, check_dissipativity)
from .rng import STREAMS, NoisePlan
from .semigroup import (Estimate, Observable, Setup, endpoint_samples, gauss_expect,
                        ou_projection_moments, sample_invariant)
from .spectral_model import (ModelConstants, OperatorPair, UnsupportedRegime, cm_norm,
                             dissipative_constants, exp_integrability_integral,
                             exp_integrability_threshold, lipschitz_constants)

__all__ = [
    "Z",
    "PASS",
    "FAIL",
    "INCONCLUSIVE",
    "verdict_from",
    "HarnackReport",
    "CheckReport",
    "CheckSpec",
    "Sampler",
    "regime_constants",
    "effective_ou_pair",
    "harnack_exponent",
    "check_harnack_lipschitz",
    "check_harnack_dissipative",
    "check_log_harnack",
    "check_gradient_estimate",
    "check_yosida_semigroup",
    "check_galerkin",
    "check_strong_feller",
    "check_hypercontractivity",
    "check_exp_integrability",
    "hypercontractivity_ratio_ou",
    "gaussian_optimal_exponent",
]

Z = 3.0
PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


def verdict_from(margin: float, ci: float, scale: float = 1.0, z: float = Z) -> str:
    """PASS iff ``margin > z ci``; FAIL iff ``margin < -z ci``; else INCONCLUSIVE.

    With ``ci == 0`` (deterministic sides) a margin within rounding of zero,
    ``|margin| <= 1e-12 scale``, counts as PASS.
    """
    if ci == 0:
        if margin >= -1e-12 * max(1.0, abs(scale)):
            return PASS
        return FAIL
    if margin > z * ci:
        return PASS
    if margin < -z * ci:
        return FAIL
    return INCONCLUSIVE


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class HarnackReport:
    check_id: str
    kind: str
    lhs: Estimate
    rhs: Estimate
    factor: float
    margin: float
    ci_margin: float
    verdict: str
    params: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def summary_row(self) -> dict:
        return {"id": self.check_id, "lhs": self.lhs.mean, "rhs": self.rhs.mean, "factor": self.factor,
                "margin": self.margin, "ci": self.ci_margin, "verdict": self.verdict}

    def to_json(self) -> dict:
        return _clean({"id": self.check_id, "kind": self.kind, "lhs": self.lhs.to_json(),
                       "rhs": self.rhs.to_json(), "factor": self.factor, "margin": self.margin,
                       "ci_margin": self.ci_margin, "verdict": self.verdict, "params": self.params,
                       "constants": self.constants, "diagnostics": self.diagnostics})


@dataclass
class CheckReport:
    """Report for checks that are not a single two-sided inequality.

    ``lhs``/``rhs``/``factor``/``margin``/``ci`` summarise the decisive
    comparison (for convergence checks: final gap against ``z`` times its CI).
    """

    check_id: str
    kind: str
    lhs: float
    rhs: float
    factor: float
    margin: float
    ci: float
    verdict: str
    details: dict = field(default_factory=dict)
    plot: list | None = None

    def summary_row(self) -> dict:
        return {"id": self.check_id, "lhs": self.lhs, "rhs": self.rhs, "factor": self.factor,
                "margin": self.margin, "ci": self.ci, "verdict": self.verdict}

    def to_json(self) -> dict:
        return _clean({"id": self.check_id, "kind": self.kind, "lhs": self.lhs, "rhs": self.rhs,
                       "factor": self.factor, "margin": self.margin, "ci": self.ci,
                       "verdict": self.verdict, "details": self.details})


@dataclass
class CheckSpec:
    """Parameters of one inequality check.

    ``regime`` is ``lipschitz`` or ``dissipative``.  ``exponent_scale``
    multiplies the Harnack exponent (1 for the real bound; 0.01 is the
    sabotage probe).  ``proof_sign`` flips the sign of ``zeta_X`` in the
    dissipative factors.
    """

    check_id: str
    setup: Setup
    regime: str
    phi: Observable
    x: np.ndarray
    h: np.ndarray
    t: float
    p: float = 2.0
    M: int = 100_000
    seed: int = 0
    constants: ModelConstants | None = None
    proof_sign: bool = False
    exponent_scale: float = 1.0
    z: float = Z

    def __post_init__(self):
        if self.regime not in ("lipschitz", "dissipative"):
            raise ValueError(f"unknown regime {self.regime!r}")
        self.x = np.asarray(self.x, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        n = self.setup.pair.n
        if self.x.shape != (n,) or self.h.shape != (n,):
            raise ValueError(f"x and h must have {n} coordinates")
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.constants is None:
            self.constants = regime_constants(self.setup, self.regime)

    def params(self) -> dict:
        return {"regime": self.regime, "p": self.p, "t": self.t, "x": self.x.tolist(),
                "h": self.h.tolist(), "h_cm_norm": float(cm_norm(self.setup.pair, self.h)),
                "M": self.M, "seed": self.seed, "observable": self.phi.describe(),
                "proof_sign": self.proof_sign, "exponent_scale": self.exponent_scale,
                "setup": self.setup.describe()}


class Sampler:
    """Caches endpoint samples ``X(t, start)`` for one ``(setup, M, seed)``.

    All starts share the same noise, so any two cached arrays are coupled
    path by path.
    """

    def __init__(self, setup: Setup, M: int, seed: int):
        self.setup, self.M, self.seed = setup, M, seed
        self._store: dict = {}

    @staticmethod
    def _key(start, t):
        return (np.asarray(start, dtype=float).tobytes(), round(float(t), 12))

    def prefetch(self, starts, times):
        starts = [np.asarray(s, dtype=float) for s in starts]
        missing = [s for s in starts if any(self._key(s, t) not in self._store for t in times)]
        if not missing:
            return
        uniq = {s.tobytes(): s for s in missing}
        arr = np.stack(list(uniq.values()))
        X = endpoint_samples(self.setup, arr, list(times), self.M, self.seed)
        for i, s in enumerate(uniq.values()):
            for j, t in enumerate(times):
                self._store[self._key(s, t)] = X[i, :, j]

    def endpoints(self, start, t):
        key = self._key(start, t)
        if key not in self._store:
            self.prefetch([start], [t])
        return self._store[key]


# ---------------------------------------------------------------- constants

def effective_ou_pair(setup: Setup) -> OperatorPair | None:
    return setup.ou_pair()


def regime_constants(setup: Setup, regime: str) -> ModelConstants:
    """Derive the constants a regime needs from the drift's declared properties."""
    pair, d = setup.pair, setup.drift
    if regime == "dissipative":
        M, m = d.growth
        return dissipative_constants(pair, d.zeta_F, M=M, m=m,
                                     delta=d.delta if isinstance(d, YosidaWrapped) else None)
    if isinstance(d, ZeroDrift):
        c = lipschitz_constants(pair, L_F=0.0, case="smoothing")
        c.K1 = 1.0
        return c
    if isinstance(d, LinearDrift):
        c = lipschitz_constants(pair, L_F=abs(d.zeta), case="smoothing", one_sided=d.zeta)
    elif isinstance(d, ComposedDrift):
        c = lipschitz_constants(pair, L_G=d.L_G, case="composed")
    elif isinstance(d, YosidaWrapped):
        c = lipschitz_constants(pair, L_F=d.lipschitz, case="smoothing")
    else:
        raise UnsupportedRegime(f"drift {d.name!r} is not globally Lipschitz")
    if c.K1 is None:
        raise UnsupportedRegime("Lipschitz-case constants unavailable (zeta_X <= 0 or gamma undefined)")
    return c


def _zeta_X(spec: CheckSpec) -> float:
    z = spec.constants.zeta_X_diss
    return -z if spec.proof_sign else z


def harnack_exponent(spec: CheckSpec) -> float:
    """Exponent of the power Harnack factor for ``spec.regime``."""
    hn2 = float(cm_norm(spec.setup.pair, spec.h)) ** 2
    p, t = spec.p, spec.t
    if spec.regime == "lipschitz":
        e = p * spec.constants.K1**2 * hn2 / (t * (p - 1))
    else:
        e = p * math.exp(2 * t * _zeta_X(spec)) * hn2 / (t * (p - 1))
    return e * spec.exponent_scale


def gaussian_optimal_exponent(pair: OperatorPair, h, t: float, p: float) -> float:
    """Smallest exponent for which the power Harnack bound holds for an OU process.

    ``p/(p-1) sum_k (h_k^2 / c_k) a_k / (exp(2 a_k t) - 1)``.
    """
    h = np.asarray(h, dtype=float)
    q = np.exp(-2 * pair.a * t)
    return float(p / (p - 1) * np.sum(h * h / pair.c * pair.a * q / -np.expm1(-2 * pair.a * t)))


_DISS_CACHE: dict = {}


def _dissipativity_precheck(setup: Setup, zeta: float, trials: int = 10_000) -> dict:
    key = (json.dumps(setup.drift.describe(), sort_keys=True, default=str), setup.pair.n, zeta)
    if key not in _DISS_CACHE:
        x_rep = check_dissipativity(setup.drift, zeta, trials=trials)
        c_rep = check_dissipativity(setup.drift, zeta, trials=trials, pair=setup.pair)
        _DISS_CACHE[key] = {"X": x_rep["max_violation"], "C": c_rep["max_violation"],
                            "passed": x_rep["passed"] and c_rep["passed"]}
    return _DISS_CACHE[key]


# ---------------------------------------------------------------- power Harnack

def _power_harnack(spec: CheckSpec, sampler: Sampler | None) -> HarnackReport:
    sampler = sampler or Sampler(spec.setup, spec.M, spec.seed)
    phi, p = spec.phi, spec.p
    if not phi.bounded:
        raise ValueError("Harnack checks need a bounded observable")
    Xh = sampler.endpoints(spec.x + spec.h, spec.t)
    X = sampler.endpoints(spec.x, spec.t)
    fh = phi(Xh)
    f = phi(X)
    A = float(np.mean(fh))
    fp = np.abs(f) ** p
    B = float(np.mean(fp))
    exponent = harnack_exponent(spec)
    factor = math.exp(exponent)
    lhs_val = abs(A) ** p
    margin = B * factor - lhs_val
    dlhs = p * abs(A) ** (p - 1) * np.sign(A)
    lin = factor * fp - dlhs * fh
    M = len(f)
    ci = float(np.std(lin, ddof=1) / math.sqrt(M))
    se_A = float(np.std(fh, ddof=1) / math.sqrt(M))
    lhs = Estimate(lhs_val, abs(dlhs) * se_A, M, spec.seed)
    rhs = Estimate(B, float(np.std(fp, ddof=1) / math.sqrt(M)), M, spec.seed)
    diag = {"exponent": exponent, "P_phi_x_plus_h": A, "P_phi_x_plus_h_stderr": se_A}
    ou = effective_ou_pair(spec.setup) if spec.setup.exact else None
    if ou is not None and phi.directions.shape[0] == 1:
        diag.update(_ou_harnack_oracle(ou, spec, lhs, rhs))
        diag["gaussian_optimal_exponent"] = gaussian_optimal_exponent(ou, spec.h, spec.t, p)
        diag["stated_exponent_below_gaussian_optimum"] = exponent < diag["gaussian_optimal_exponent"]
    return HarnackReport(spec.check_id, "harnack_" + spec.regime, lhs, rhs, factor, margin, ci,
                         verdict_from(margin, ci, B * factor, spec.z), spec.params(),
                         _clean(spec.constants.to_json()), diag)


def _ou_harnack_oracle(pair: OperatorPair, spec: CheckSpec, lhs: Estimate, rhs: Estimate) -> dict:
    phi, p = spec.phi, spec.p
    m_h, v_h = ou_projection_moments(pair, spec.x + spec.h, spec.t, phi.directions[0])
    m_0, v_0 = ou_projection_moments(pair, spec.x, spec.t, phi.directions[0])
    A = gauss_expect(m_h, v_h, lambda z: phi.g(z[:, None]))
    B = gauss_expect(m_0, v_0, lambda z: np.abs(phi.g(z[:, None])) ** p)
    exact_lhs = abs(A) ** p
    return {
        "oracle_lhs": exact_lhs,
        "oracle_rhs": B,
        "oracle_lhs_ok": abs(lhs.mean - exact_lhs) <= spec.z * lhs.stderr + 1e-14,
        "oracle_rhs_ok": abs(rhs.mean - B) <= spec.z * rhs.stderr + 1e-14,
    }


def check_harnack_lipschitz(spec: CheckSpec, sampler: Sampler | None = None) -> HarnackReport:
    """``|P(t) phi(x+h)|^p <= P(t)|phi|^p(x) exp(p K1^2 |h|_C^2 / (t (p-1)))``."""
    if spec.regime != "lipschitz":
        raise ValueError("check_harnack_lipschitz needs regime 'lipschitz'")
    zx = spec.constants.zeta_X_lip
    if zx is None or zx <= 0 or spec.constants.K1 is None:
        raise UnsupportedRegime("Lipschitz Harnack needs zeta_X > 0 and K1")
    return _power_harnack(spec, sampler)


def check_harnack_dissipative(spec: CheckSpec, sampler: Sampler | None = None,
                              precheck: bool = True) -> HarnackReport:
    """``|P(t) phi(x+h)|^p <= P(t)|phi|^p(x) exp(p e^{2 t zeta_X} |h|_C^2 / (t (p-1)))``."""
    if spec.regime != "dissipative":
        raise ValueError("check_harnack_dissipative needs regime 'dissipative'")
    pre = None
    if precheck:
        pre = _dissipativity_precheck(spec.setup, spec.constants.zeta_F)
        if not pre["passed"]:
            raise UnsupportedRegime(
                f"drift is not dissipative with zeta_F={spec.constants.zeta_F} "
                f"(max violation X: {pre['X']:.3e}, H_C: {pre['C']:.3e})")
    rep = _power_harnack(spec, sampler)
    rep.diagnostics["zeta_X"] = _zeta_X(spec)
    if pre is not None:
        rep.diagnostics["dissipativity_precheck"] = pre
    return rep


# ---------------------------------------------------------------- log Harnack

def check_log_harnack(spec: CheckSpec, sampler: Sampler | None = None,
                      cross_check_ps=(10.0, 100.0, 1000.0)) -> HarnackReport:
    """``P(t)(ln f)(x+h) <= ln P(t) f(x) + c |h|_C^2 / t``, reported multiplicatively.

    ``lhs = exp(P(t)(ln f)(x+h))``, ``rhs = P(t) f(x)``, ``factor = exp(c |h|_C^2 / t)``
    with ``c = e^{2 t zeta_X}`` (dissipative) or ``K1^2`` (Lipschitz).  The
    additive margin is in the diagnostics.  The cross-check applies the power
    bound to ``f^{1/p}``; its p-th power tends to this bound as p grows.
    """
    phi = spec.phi
    if not phi.inf_value > 0:
        raise ValueError("log-Harnack needs an observable with positive infimum")
    sampler = sampler or Sampler(spec.setup, spec.M, spec.seed)
    hn2 = float(cm_norm(spec.setup.pair, spec.h)) ** 2
    if spec.regime == "dissipative":
        c = math.exp(2 * spec.t * _zeta_X(spec))
    else:
        c = spec.constants.K1**2
    additive = c * hn2 / spec.t * spec.exponent_scale
    factor = math.exp(additive)
    Xh = sampler.endpoints(spec.x + spec.h, spec.t)
    X = sampler.endpoints(spec.x, spec.t)
    lf = np.log(phi(Xh))
    f = phi(X)
    L = float(np.mean(lf))
    B = float(np.mean(f))
    M = len(f)
    lhs_val = math.exp(L)
    margin = B * factor - lhs_val
    lin = factor * f - lhs_val * lf
    ci = float(np.std(lin, ddof=1) / math.sqrt(M))
    lhs = Estimate(lhs_val, lhs_val * float(np.std(lf, ddof=1)) / math.sqrt(M), M, spec.seed)
    rhs = Estimate(B, float(np.std(f, ddof=1)) / math.sqrt(M), M, spec.seed)
    cross = []
    for p in cross_check_ps:
        root = float(np.mean(np.exp(lf / p))) ** p
        pf = math.exp(p / (p - 1) * additive)
        cross.append({"p": p, "power_lhs": root, "power_factor": pf,
                      "lhs_gap": root - lhs_val, "factor_gap": pf - factor})
    diag = {"additive_lhs": L, "additive_rhs": math.log(B) + additive, "additive_term": additive,
            "additive_margin": math.log(B) + additive - L, "p_limit_cross_check": cross,
            "cross_check_converges": all(abs(b["lhs_gap"]) <= abs(a["lhs_gap"]) + 1e-15
                                         and abs(b["factor_gap"]) <= abs(a["factor_gap"]) + 1e-15
                                         for a, b in zip(cross, cross[1:]))}
    return HarnackReport(spec.check_id, "log_harnack", lhs, rhs, factor, margin, ci,
                         verdict_from(margin, ci, B * factor, spec.z), spec.params(),
                         _clean(spec.constants.to_json()), diag)


# ---------------------------------------------------------------- gradient

def check_gradient_estimate(spec: CheckSpec, fd_step: float = 1e-2, sampler: Sampler | None = None,
                            richardson: bool = True) -> HarnackReport:
    """``|D_C P(t) phi(x)|_C <= factor * P(t)|D_C phi|_C(x)``.

    ``factor`` is ``K1`` (Lipschitz) or ``e^{t zeta_X}`` (dissipative).  The
    left side is assembled from central differences along the ``H_C``
    orthonormal frame ``sqrt(c_k) e_k``.
    """
    setup, phi = spec.setup, spec.phi
    if not phi.smooth:
        raise ValueError("gradient check needs a differentiable observable")
    pair = setup.pair
    n = pair.n
    sampler = sampler or Sampler(setup, spec.M, spec.seed)
    frame = np.sqrt(pair.c)[:, None] * np.eye(n)

    def derivs(s):
        starts = [spec.x + s * frame[k] for k in range(n)] + [spec.x - s * frame[k] for k in range(n)]
        sampler.prefetch(starts + [spec.x], [spec.t])
        q = np.empty((n, spec.M))
        for k in range(n):
            q[k] = (phi(sampler.endpoints(starts[k], spec.t))
                    - phi(sampler.endpoints(starts[n + k], spec.t))) / (2 * s)
        return q

    q = derivs(fd_step)
    d = q.mean(axis=1)
    lhs_val = float(np.sqrt(np.sum(d * d)))
    X = sampler.endpoints(spec.x, spec.t)
    g = phi.cm_grad_norm(pair, X)
    R = float(np.mean(g))
    if spec.regime == "lipschitz":
        factor = spec.constants.K1
    else:
        factor = math.exp(spec.t * _zeta_X(spec))
    margin = factor * R - lhs_val
    M = spec.M
    w = d / lhs_val if lhs_val > 0 else np.zeros(n)
    lin = factor * g - w @ q
    ci = float(np.std(lin, ddof=1) / math.sqrt(M))
    lin_lhs = w @ q
    lhs = Estimate(lhs_val, float(np.std(lin_lhs, ddof=1) / math.sqrt(M)), M, spec.seed)
    rhs = Estimate(R, float(np.std(g, ddof=1) / math.sqrt(M)), M, spec.seed)
    diag = {"directional": d.tolist(),
            "noise_bias": float(np.sum(np.var(q, axis=1, ddof=1)) / M)}
    if richardson:
        q2 = derivs(fd_step / 2)
        diag["richardson_half_step_norm"] = float(np.linalg.norm(q2.mean(axis=1)))
    ou = effective_ou_pair(setup) if setup.exact else None
    if ou is not None and phi.directions.shape[0] == 1:
        hdir = phi.directions[0]
        m, v = ou_projection_moments(ou, spec.x, spec.t, hdir)
        Eg1 = gauss_expect(m, v, lambda z: phi.dg(z[:, None])[:, 0])
        exact = abs(Eg1) * float(np.linalg.norm(np.sqrt(ou.c) * np.exp(-ou.a * spec.t) * hdir))
        diag["oracle_lhs"] = exact
    return HarnackReport(spec.check_id, "gradient_" + spec.regime, lhs, rhs, factor, margin, ci,
                         verdict_from(margin, ci, factor * R, spec.z), spec.params(),
                         _clean(spec.constants.to_json()), diag)


# ---------------------------------------------------------------- convergence checks

def _trend_ok(gaps, ses, z=Z):
    return all(b <= a + z * s for a, b, s in zip(gaps, gaps[1:], ses[1:]))


def check_yosida_semigroup(spec: CheckSpec, deltas) -> CheckReport:
    """Gaps ``|P_delta(t) phi(x) - P(t) phi(x)|`` under shared noise as ``delta`` shrinks.

    The reference uses the unregularised drift with the same ``dt`` and
    noise.  PASS needs a non-increasing trend (within noise) and a final gap
    below ``z`` times the standard error of the reference estimate.
    """
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be decreasing")
    setup, phi = spec.setup, spec.phi
    ref_setup = replace(setup, exact=False)
    ref = phi(Sampler(ref_setup, spec.M, spec.seed).endpoints(spec.x, spec.t))
    se_ref = float(np.std(ref, ddof=1) / math.sqrt(len(ref)))
    rows = []
    for delta in deltas:
        ds = replace(setup, drift=YosidaWrapped(setup.drift, delta), exact=False)
        val = phi(Sampler(ds, spec.M, spec.seed).endpoints(spec.x, spec.t))
        diff = val - ref
        rows.append({"delta": delta, "P_delta": float(np.mean(val)), "gap": abs(float(np.mean(diff))),
                     "paired_se": float(np.std(diff, ddof=1) / math.sqrt(len(diff)))})
    gaps = [r["gap"] for r in rows]
    ses = [r["paired_se"] for r in rows]
    trend = _trend_ok(gaps, ses, spec.z)
    final = gaps[-1]
    ci = se_ref
    margin = spec.z * ci - final
    if trend and final < spec.z * ci:
        verdict = PASS
    elif not trend and final > spec.z * ci and gaps[-1] > gaps[0] + spec.z * ses[-1]:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    details = {"P_reference": float(np.mean(ref)), "reference_se": se_ref, "rows": rows,
               "trend_non_increasing": trend, "params": spec.params()}
    return CheckReport(spec.check_id, "yosida_semigroup", final, spec.z * ci, 1.0, margin, ci, verdict,
                       _clean(details), rows)


def check_galerkin(spec: CheckSpec, dims) -> CheckReport:
    """Cauchy gaps ``|P_{n_{i+1}} phi(x) - P_{n_i} phi(x)|`` under coupled noise.

    Shared modes receive identical increments at every dimension, so the
    gaps isolate the effect of the extra modes.  PASS needs strictly
    decreasing gaps and a final gap below ``z`` times the standard error of
    the finest estimate.
    """
    dims = [int(d) for d in dims]
    if any(b < a for a, b in zip(dims, dims[1:])):
        raise ValueError("dims must be non-decreasing")
    setup, phi = spec.setup, spec.phi
    nmax = setup.pair.n
    if dims[-1] > nmax:
        raise ValueError(f"setup has {nmax} modes, fewer than the largest dimension {dims[-1]}")
    n0 = dims[0]
    if np.any(spec.x[n0:]) or np.any(phi.directions[:, n0:]):
        raise ValueError(f"x and observable directions must be supported on the first {n0} modes")
    values = []
    for n in dims:
        pair_n = setup.pair.truncate(n)
        s_n = replace(setup, pair=pair_n, drift=setup.drift.truncate(n, pair_n))
        X = Sampler(s_n, spec.M, spec.seed).endpoints(spec.x[:n], spec.t)
        values.append(phi.truncate(n)(X))
    rows = []
    for i in range(1, len(dims)):
        diff = values[i] - values[i - 1]
        rows.append({"n_from": dims[i - 1], "n_to": dims[i], "gap": abs(float(np.mean(diff))),
                     "paired_se": float(np.std(diff, ddof=1) / math.sqrt(len(diff)))})
    gaps = [r["gap"] for r in rows]
    strictly = all(b < a for a, b in zip(gaps, gaps[1:]))
    se_fine = float(np.std(values[-1], ddof=1) / math.sqrt(len(values[-1])))
    final = gaps[-1] if gaps else 0.0
    margin = spec.z * se_fine - final
    if not gaps:
        verdict = PASS
    elif strictly and final < spec.z * se_fine:
        verdict = PASS
    elif final > spec.z * se_fine and final > spec.z * rows[-1]["paired_se"] and not strictly:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    details = {"dims": dims, "estimates": [float(np.mean(v)) for v in values], "rows": rows,
               "strictly_decreasing": strictly, "finest_se": se_fine, "params": spec.params()}
    return CheckReport(spec.check_id, "galerkin", final, spec.z * se_fine, 1.0, margin, se_fine,
                       verdict, _clean(details), rows)


def _strong_feller_envelope(P_f: float, sup_f: float, c: float, hn: float, t: float) -> dict:
    # For f >= 0: P f(x+h) - P f(x) <= eps |f|^2 + ln(1 + eps P f(x)) / eps - P f(x)
    #                                    + c |h|_C^2 / (eps t), minimised over eps.
    if hn == 0:
        return {"eps": 0.0, "envelope": 0.0}

    def env(le):
        eps = math.exp(le)
        return eps * sup_f**2 + math.log1p(eps * P_f) / eps - P_f + c * hn * hn / (eps * t)

    closed = math.sqrt(c * hn * hn / t) / max(sup_f, 1e-300)
    res = minimize_scalar(env, bracket=(math.log(closed) - 1, math.log(closed) + 1))
    return {"eps": math.exp(res.x), "envelope": float(res.fun),
            "closed_form": 2.0 * sup_f * math.sqrt(c / t) * hn}


def check_strong_feller(spec: CheckSpec, radii) -> CheckReport:
    """``|P(t) f(x + r h) - P(t) f(x)|`` for shrinking ``r``, with the optimised envelope.

    ``spec.h`` fixes the direction; ``r |h|_C`` are the shift sizes.
    """
    radii = [float(r) for r in radii]
    if any(b > a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be non-increasing")
    setup, phi = spec.setup, spec.phi
    sampler = Sampler(setup, spec.M, spec.seed)
    starts = [spec.x + r * spec.h for r in radii]
    sampler.prefetch(starts + [spec.x], [spec.t])
    f0 = phi(sampler.endpoints(spec.x, spec.t))
    shift = phi.inf_value if math.isfinite(phi.inf_value) else 0.0
    P0 = float(np.mean(f0))
    se0 = float(np.std(f0, ddof=1) / math.sqrt(len(f0)))
    if spec.regime == "dissipative":
        c = math.exp(2 * spec.t * _zeta_X(spec))
    else:
        c = spec.constants.K1**2
    sup_pos = phi.sup_abs - shift if shift <= 0 else phi.sup_abs
    hn = float(cm_norm(setup.pair, spec.h))
    rows = []
    for r, s in zip(radii, starts):
        diff = phi(sampler.endpoints(s, spec.t)) - f0
        env = _strong_feller_envelope(P0 - shift, sup_pos, c, r * hn, spec.t)
        rows.append({"radius": r, "h_cm_norm": r * hn, "gap": abs(float(np.mean(diff))),
                     "paired_se": float(np.std(diff, ddof=1) / math.sqrt(len(diff))),
                     "envelope": env["envelope"], "eps_opt": env["eps"]})
    gaps = [row["gap"] for row in rows]
    ses = [row["paired_se"] for row in rows]
    trend = _trend_ok(gaps, ses, spec.z)
    within = all(row["gap"] <= row["envelope"] + spec.z * row["paired_se"] for row in rows)
    final = gaps[-1]
    margin = spec.z * se0 - final
    if trend and within and final < spec.z * se0:
        verdict = PASS
    elif not within:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    details = {"P_f_x": P0, "se": se0, "rows": rows, "trend_non_increasing": trend,
               "within_envelope": within, "envelope_constant": c, "params": spec.params()}
    return CheckReport(spec.check_id, "strong_feller", final, spec.z * se0, 1.0, margin, se0, verdict,
                       _clean(details), rows)


# ---------------------------------------------------------------- hypercontractivity

def hypercontractivity_ratio_ou(pair: OperatorPair, phi: Observable, t: float, nodes: int = 120) -> float:
    """``|P(t) f|_{L^4(mu)} / |f|_{L^2(mu)}`` for ``F = 0`` and a one-direction ``f``, by quadrature."""
    if phi.directions.shape[0] != 1:
        raise ValueError("quadrature oracle covers one-direction observables")
    h = phi.directions[0]
    var_mu = float(np.sum(h * h * pair.invariant_variance))
    y, w = np.polynomial.hermite.hermgauss(nodes)
    w = w / math.sqrt(math.pi)
    z_outer = math.sqrt(2 * var_mu) * y
    f2 = float(np.sum(w * phi.g(z_outer[:, None]) ** 2))
    if t == 0:
        Pf = phi.g(z_outer[:, None])
    else:
        # <X(t,x), h> given <x, h> = z is Gaussian only when h is an eigen-direction.
        nz = np.flatnonzero(h)
        if nz.size != 1:
            raise ValueError("quadrature oracle needs h along a single mode")
        k = nz[0]
        rho = math.exp(-pair.a[k] * t)
        var_t = float(h[k] ** 2 * pair.ou_variance(t)[k])
        inner = rho * z_outer[:, None] + math.sqrt(2 * var_t) * y[None, :]
        Pf = np.sum(w[None, :] * phi.g(inner[..., None]), axis=1)
    f4 = float(np.sum(w * Pf**4))
    return f4**0.25 / math.sqrt(f2)


def check_hypercontractivity(setup: Setup, t_grid, family, outer: int = 4000, inner: int = 4000,
                             seed: int = 0, burn_in: float = 5.0, z: float = Z) -> CheckReport:
    """Ratios ``|P(t) f|_{L^4(mu)} / |f|_{L^2(mu)}`` across ``t_grid`` and ``family``.

    Estimated by nested Monte Carlo over invariant samples; for ``F = 0`` and
    one-mode observables the quadrature values are reported next to them.
    The OU threshold time ``ln(3) / (2 a_1)`` is where the ratio drops to 1.
    PASS when every ratio at ``t >= t_N`` is at most 1 within ``z``
    standard errors and the ratios do not increase in ``t`` beyond ``t_N``.
    """
    pair = setup.pair
    a1 = float(pair.a[0])
    t_nelson = math.log(3.0) / (2.0 * a1)
    mu = sample_invariant(setup, burn_in, outer, seed)
    ou = effective_ou_pair(setup) if setup.exact else None
    rows = []
    for j, f in enumerate(family):
        f_mu = f(mu)
        norm2 = math.sqrt(float(np.mean(f_mu**2)))
        for t in t_grid:
            if t == 0:
                Pf = f_mu
            else:
                Pf = _nested_Pt(setup, f, mu, t, inner, seed + 7919 * (j + 1))
            norm4 = float(np.mean(Pf**4)) ** 0.25
            ratio = norm4 / norm2
            # delta-method stderr of the ratio over the outer sample
            lin = 0.25 * Pf**4 / norm4**4 - 0.5 * f_mu**2 / norm2**2
            se = ratio * float(np.std(lin, ddof=1) / math.sqrt(len(lin)))
            row = {"f": j, "t": float(t), "ratio": ratio, "se": se,
                   "beyond_threshold": bool(math.exp(-2 * a1 * t) <= 1 / 3 + 1e-12)}
            if ou is not None and f.directions.shape[0] == 1 and np.count_nonzero(f.directions[0]) == 1:
                row["oracle_ratio"] = hypercontractivity_ratio_ou(ou, f, float(t))
            rows.append(row)
    beyond = [r for r in rows if r["beyond_threshold"]]
    bounded = all(r["ratio"] <= 1 + z * r["se"] for r in beyond)
    monotone = True
    for j in range(len(family)):
        seq = [r for r in beyond if r["f"] == j]
        monotone &= all(b["ratio"] <= a["ratio"] + z * (a["se"] + b["se"]) for a, b in zip(seq, seq[1:]))
    violations = [r for r in beyond if r["ratio"] > 1 + z * r["se"]]
    worst = max(beyond, key=lambda r: r["ratio"] - 1) if beyond else None
    if bounded and monotone:
        verdict = PASS
    elif any(r["ratio"] > 1 + z * r["se"] for r in violations):
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    t0_emp = None
    for t in sorted({r["t"] for r in rows}):
        if all(r["ratio"] <= 1 + z * r["se"] for r in rows if r["t"] >= t):
            t0_emp = t
            break
    C_emp = max((r["ratio"] for r in rows if t0_emp is not None and r["t"] >= t0_emp), default=None)
    lhs = worst["ratio"] if worst else 0.0
    se = worst["se"] if worst else 0.0
    details = {"t_threshold": t_nelson, "empirical_t0": t0_emp, "empirical_C": C_emp, "rows": rows,
               "bounded": bounded, "monotone": monotone}
    return CheckReport("hypercontractivity", "hypercontractivity", lhs, 1.0, 1.0, 1.0 - lhs, se, verdict,
                       _clean(details), rows)


def _nested_Pt(setup: Setup, f: Observable, starts, t: float, inner: int, seed: int) -> np.ndarray:
    # Each outer point gets its own block of paths so inner errors stay independent.
    out = np.empty(len(starts))
    for i, x in enumerate(starts):
        X = endpoint_samples(setup, x, [t], inner, seed, path_offset=i * inner)[0, :, 0]
        out[i] = float(np.mean(f(X)))
    return out


def check_exp_integrability(pair: OperatorPair, sizes=(1_000, 10_000, 100_000, 1_000_000),
                            seed: int = 0, reps: int = 15, rel_tol: float = 0.05) -> CheckReport:
    """Brackets ``eps*`` of the Gaussian double integral by a factor of two.

    Below (``eps*/2``) the Monte Carlo mean must approach the closed form
    within ``rel_tol`` at the largest size; above (``2 eps*``) the median of
    repeated sample means must grow with the sample size.
    """
    eps_star = exp_integrability_threshold(pair)
    sd = np.sqrt(pair.invariant_variance)
    w = 1.0 / pair.c

    def sample_means(eps, N, rep):
        plan = NoisePlan(seed + rep, N, 0, STREAMS["pairs"])
        x = sd * plan.increments(0, pair.n)
        y = sd * plan.increments(1, pair.n)
        q = np.sum((x - y) ** 2 * w, axis=1)
        return float(np.mean(np.exp(eps * q)))

    below = eps_star / 2
    exact = exp_integrability_integral(pair, below)
    below_rows = [{"N": N, "mean": sample_means(below, N, 0)} for N in sizes]
    rel = abs(below_rows[-1]["mean"] - exact) / exact
    above = 2 * eps_star
    above_rows = []
    for N in sizes:
        means = [sample_means(above, N, r) for r in range(reps)]
        above_rows.append({"N": N, "median_mean": float(np.median(means))})
    meds = [r["median_mean"] for r in above_rows]
    growing = all(b > a for a, b in zip(meds, meds[1:]))
    converging = rel <= rel_tol
    verdict = PASS if (growing and converging) else FAIL
    details = {"eps_star": eps_star, "below": below, "above": above, "closed_form_below": exact,
               "relative_error_below": rel, "below_rows": below_rows, "above_rows": above_rows,
               "diverging_above": growing}
    return CheckReport("exp_integrability", "exp_integrability", rel, rel_tol, 1.0, rel_tol - rel, 0.0,
                       verdict, _clean(details))
