"""Diagonal operator pair A = -1/2 Q^-beta, C = Q^(2 alpha) on a truncated eigenbasis.

All operators act coordinate-wise on vectors expressed in the joint
eigenbasis ``e_1, ..., e_n`` of ``Q``.  Storage is 0-based; documentation
and configuration files count modes from 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

__all__ = [
    "Spectrum",
    "OperatorPair",
    "ModelConstants",
    "UnsupportedRegime",
    "dirichlet_spectrum",
    "explicit_spectrum",
    "build_pair",
    "semigroup_apply",
    "cm_norm",
    "cm_inner",
    "smoothing_constants",
    "harnack_K1",
    "trace_condition",
    "exp_integrability_threshold",
    "exp_integrability_integral",
    "lipschitz_constants",
    "dissipative_constants",
]


class UnsupportedRegime(ValueError):
    """Parameters outside the range where a closed-form constant exists."""


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of ``Q`` in non-increasing order.

    ``kind`` is ``"dirichlet"`` when ``lambda_k = (pi k)^-2``; only then is
    the tail beyond the truncation known in closed form.
    """

    lam: np.ndarray
    kind: str = "explicit"

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        if lam.size < 1:
            raise ValueError("spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive and finite")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be non-increasing")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return int(self.lam.size)

    def truncate(self, n: int) -> "Spectrum":
        if self.kind == "dirichlet":
            return dirichlet_spectrum(n)
        if n > self.n:
            raise ValueError(f"explicit spectrum has only {self.n} modes")
        return Spectrum(self.lam[:n], self.kind)


def dirichlet_spectrum(n: int) -> Spectrum:
    """Eigenvalues of the inverse Dirichlet Laplacian on [0, 1]: ``1 / (pi^2 k^2)``."""
    if int(n) != n or n < 1:
        raise ValueError("mode count must be a positive integer")
    k = np.arange(1, int(n) + 1, dtype=float)
    return Spectrum(1.0 / (math.pi**2 * k**2), "dirichlet")


def explicit_spectrum(values) -> Spectrum:
    return Spectrum(np.asarray(values, dtype=float), "explicit")


@dataclass(frozen=True)
class OperatorPair:
    spectrum: Spectrum
    alpha: float
    beta: float
    a: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.spectrum.n

    @property
    def lam(self) -> np.ndarray:
        return self.spectrum.lam

    @property
    def zeta_A(self) -> float:
        """Constant with ``<Ax, x> <= zeta_A |x|^2`` (negative: decay)."""
        return -float(self.a[0])

    @property
    def sqrt_c_norm(self) -> float:
        """Operator norm of ``C^(1/2)``, i.e. ``lambda_1^alpha``."""
        return float(np.sqrt(self.c.max()))

    def apply_A(self, x):
        return -self.a * np.asarray(x, dtype=float)

    def apply_C(self, x):
        return self.c * np.asarray(x, dtype=float)

    def ou_variance(self, t):
        """Per-mode variance ``c_k (1 - e^{-2 a_k t}) / (2 a_k)`` of the stochastic convolution."""
        t = np.asarray(t, dtype=float)[..., None]
        return self.c * -np.expm1(-2.0 * self.a * t) / (2.0 * self.a)

    @property
    def invariant_variance(self):
        """Per-mode variance ``c_k / (2 a_k)`` of the zero-drift invariant law."""
        return self.c / (2.0 * self.a)

    def truncate(self, n: int) -> "OperatorPair":
        return build_pair(self.spectrum.truncate(n), self.alpha, self.beta)

    def describe(self) -> dict:
        return {
            "n": self.n,
            "spectrum": self.spectrum.kind,
            "alpha": self.alpha,
            "beta": self.beta,
            "a1": float(self.a[0]),
            "c1": float(self.c[0]),
        }


def build_pair(spec: Spectrum, alpha: float, beta: float) -> OperatorPair:
    alpha = float(alpha)
    beta = float(beta)
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("alpha and beta must be finite")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    a = 0.5 * spec.lam ** (-beta)
    c = spec.lam ** (2.0 * alpha)
    a.setflags(write=False)
    c.setflags(write=False)
    return OperatorPair(spec, alpha, beta, a, c)


def semigroup_apply(pair: OperatorPair, t: float, x):
    """``e^{tA} x`` computed mode by mode."""
    if t < 0:
        raise ValueError("semigroup time must be non-negative")
    return np.exp(-pair.a * t) * np.asarray(x, dtype=float)


def cm_inner(pair: OperatorPair, h1, h2):
    return np.sum(np.asarray(h1) * np.asarray(h2) / pair.c, axis=-1)


def cm_norm(pair: OperatorPair, h):
    """Cameron-Martin norm ``|C^{-1/2} h|``; works on stacked vectors."""
    h = np.asarray(h, dtype=float)
    return np.sqrt(np.sum(h * h / pair.c, axis=-1))


def smoothing_constants(pair: OperatorPair) -> tuple[float, float]:
    """Return ``(gamma, K)`` with ``|C^{-1/2} e^{tA}| <= K t^{-gamma}``.

    Mode by mode the quantity is ``(2 a_k)^gamma e^{-a_k t}``; maximising
    ``(2u)^gamma e^{-u}`` over ``u = a_k t`` gives ``K = (2 gamma / e)^gamma``.
    """
    alpha, beta = pair.alpha, pair.beta
    if beta <= 0:
        raise UnsupportedRegime("smoothing bound needs beta > 0")
    if alpha >= beta:
        raise UnsupportedRegime("smoothing bound needs alpha < beta (gamma < 1)")
    g = alpha / beta
    if alpha == 0:
        return 0.0, 1.0
    return g, (2.0 * g / math.e) ** g


@dataclass
class ModelConstants:
    """Named scalars consumed by the inequalities.

    Two sign conventions coexist.  ``zeta_A``/``zeta_F`` follow
    "``A - zeta Id`` is dissipative" (negative means decay) and
    ``zeta_X_diss = zeta_A + zeta_F`` inherits it.  ``zeta_X_lip`` is the
    positive decay rate of ``<(A + DF)h, h> <= -zeta_X |h|^2``.
    """

    gamma: float | None = None
    K: float | None = None
    K1: float | None = None
    K1_case: str | None = None
    zeta_A: float | None = None
    zeta_F: float | None = None
    zeta_X_lip: float | None = None
    zeta_X_diss: float | None = None
    L_F: float | None = None
    L_G: float | None = None
    M: float | None = None
    m: int | None = None
    delta: float | None = None
    eta: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def harnack_K1(case: str, consts: ModelConstants, pair: OperatorPair) -> float:
    """Gradient constant of the Lipschitz case.

    ``smoothing``: ``1 + K L_F |C^1/2| (1/(1-gamma) + 1/zeta_X)``;
    ``composed``:  ``1 + L_G |C^1/2| / zeta_X``.
    """
    zx = consts.zeta_X_lip
    if zx is None or not zx > 0:
        raise ValueError("K1 needs a positive decay rate zeta_X")
    norm_c = pair.sqrt_c_norm
    if case == "smoothing":
        if consts.gamma is None or consts.K is None:
            raise ValueError("smoothing case needs gamma and K")
        if not consts.gamma < 1:
            raise UnsupportedRegime("smoothing case needs gamma < 1")
        L = consts.L_F or 0.0
        return 1.0 + consts.K * L * norm_c * (1.0 / (1.0 - consts.gamma) + 1.0 / zx)
    if case == "composed":
        L = consts.L_G or 0.0
        return 1.0 + L * norm_c / zx
    raise ValueError(f"unknown K1 case {case!r}")


def _dirichlet_trace_tail(pair: OperatorPair, eta: float) -> float:
    # term_k <= c_k (2 a_k)^(eta-1) Gamma(1-eta) = Gamma(1-eta) (pi k)^(-2p)
    p = 2.0 * pair.alpha + pair.beta * (1.0 - eta)
    if 2.0 * p <= 1.0:
        return math.inf
    n = pair.n
    return float(gamma_fn(1.0 - eta) * math.pi ** (-2.0 * p) * n ** (1.0 - 2.0 * p) / (2.0 * p - 1.0))


def trace_condition(pair: OperatorPair, T: float, eta: float) -> dict:
    """``sum_k c_k int_0^T s^-eta e^{-2 a_k s} ds`` on the truncation.

    Each term equals ``c_k (2 a_k)^(eta-1) gamma_lower(1-eta, 2 a_k T)``.
    ``per_mode_tail`` bounds the neglected modes (``nan`` when the spectrum
    beyond the truncation is unknown).
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if T <= 0:
        raise ValueError("T must be positive")
    s = 1.0 - eta
    two_a = 2.0 * pair.a
    terms = pair.c * two_a ** (-s) * gamma_fn(s) * gammainc(s, two_a * T)
    tail = _dirichlet_trace_tail(pair, eta) if pair.spectrum.kind == "dirichlet" else math.nan
    return {"value": float(np.sum(terms)), "per_mode_tail": tail, "terms": terms}


def exp_integrability_threshold(pair: OperatorPair) -> float:
    """Largest ``eps`` with ``int int exp(eps |x-y|_C^2) mu(dx) mu(dy)`` finite.

    Under the Gaussian invariant law ``(x_k - y_k)/sqrt(c_k) ~ N(0, 1/a_k)``,
    so each factor ``(1 - 2 eps / a_k)^(-1/2)`` is finite iff ``eps < a_k / 2``.
    """
    return float(pair.a[0]) / 2.0


def exp_integrability_integral(pair: OperatorPair, eps: float) -> float:
    """Closed form of the double integral on the truncation (``inf`` past the threshold)."""
    r = 2.0 * eps / pair.a
    if np.any(r >= 1.0):
        return math.inf
    return float(np.exp(-0.5 * np.sum(np.log1p(-r))))


def lipschitz_constants(pair: OperatorPair, *, L_F: float = 0.0, L_G: float | None = None,
                        case: str = "smoothing", one_sided: float | None = None) -> ModelConstants:
    """Constants for the globally Lipschitz regime.

    ``one_sided`` is the best ``s`` with ``<DF(x)h, h> <= s |h|^2``; it
    defaults to the Lipschitz bound ``L_F`` (or ``|C^1/2| L_G``).
    """
    consts = ModelConstants(zeta_A=pair.zeta_A, L_F=L_F, L_G=L_G, K1_case=case)
    if case == "composed":
        if L_G is None:
            raise ValueError("composed case needs L_G")
        consts.L_F = pair.sqrt_c_norm * L_G
    s = consts.L_F if one_sided is None else one_sided
    consts.zeta_X_lip = float(pair.a[0]) - s
    consts.eta = consts.zeta_X_lip
    if pair.beta > 0 and pair.alpha < pair.beta:
        consts.gamma, consts.K = smoothing_constants(pair)
    if consts.zeta_X_lip > 0 and (case == "composed" or consts.gamma is not None):
        consts.K1 = harnack_K1(case, consts, pair)
    return consts


def dissipative_constants(pair: OperatorPair, zeta_F: float, *, M: float | None = None,
                          m: int | None = None, delta: float | None = None) -> ModelConstants:
    return ModelConstants(
        zeta_A=pair.zeta_A,
        zeta_F=float(zeta_F),
        zeta_X_diss=pair.zeta_A + float(zeta_F),
        M=M,
        m=m,
        delta=delta,
    )
