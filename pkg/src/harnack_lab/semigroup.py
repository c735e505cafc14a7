"""Monte Carlo transition semigroup, cylindrical observables and the Galerkin generator.

Observables are cylindrical, ``phi(x) = g(<x, h_1>, ..., <x, h_m>)``, drawn
from a typed catalogue that stores ``sup |phi|``, ``inf phi`` and the
analytic derivatives of ``g``.  For ``F = 0`` the process is Gaussian, and the
``ou_*`` oracles give exact expectations to compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .drift import Drift, LinearDrift, ZeroDrift
from .rng import STREAMS, NoisePlan
from .sde_sim import TimeGrid, ou_exact_sample, simulate_endpoints, simulate_from_starts
from .spectral_model import OperatorPair, cm_norm

__all__ = [
    "Observable",
    "OBSERVABLE_KINDS",
    "EPS_FLOOR",
    "Estimate",
    "Setup",
    "endpoint_samples",
    "estimate_Pt",
    "apply_generator",
    "generator_consistency",
    "directional_derivative_Pt",
    "sample_invariant",
    "ou_projection_moments",
    "ou_cosine_mean",
    "ou_expect",
    "gauss_expect",
]

EPS_FLOOR = 1e-3

BOUNDED_KINDS = ("constant", "cosine", "tanh", "product_sigmoid", "floor_shifted", "step", "capped_exp")
OBSERVABLE_KINDS = BOUNDED_KINDS + ("linear", "quadratic")


@dataclass(frozen=True)
class Observable:
    """Cylindrical test function from the catalogue.

    ========================  ===============================================
    kind                      ``g(z)`` with ``z = <x, h_i>``
    ========================  ===============================================
    ``constant``              ``offset``
    ``cosine``                ``offset + scale cos(z_1 + phase)``
    ``tanh``                  ``offset + scale tanh(steep (z_1 - center))``
    ``product_sigmoid``       ``prod_i sigmoid(steep (z_i - center))``
    ``floor_shifted``         ``max(offset + scale cos(z_1 + phase), floor)``
    ``step``                  ``offset + scale 1{z_1 > center}`` (no gradient)
    ``capped_exp``            ``offset + min(exp(steep (z_1 - center)), scale)``
    ``linear``                ``z_1`` (unbounded; generator tests only)
    ``quadratic``             ``z_1^2`` (unbounded; generator tests only)
    ========================  ===============================================
    """

    kind: str
    directions: np.ndarray
    offset: float = 0.0
    scale: float = 1.0
    phase: float = 0.0
    steep: float = 1.0
    center: float = 0.0
    floor: float = EPS_FLOOR

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        H = np.atleast_2d(np.asarray(self.directions, dtype=float))
        object.__setattr__(self, "directions", H)
        if self.kind not in ("product_sigmoid",) and H.shape[0] != 1:
            raise ValueError(f"{self.kind} observables take exactly one direction")
        if self.kind == "floor_shifted" and not self.floor > 0:
            raise ValueError("floor must be positive")
        if self.kind == "capped_exp" and not self.scale > 0:
            raise ValueError("capped_exp needs a positive cap (scale)")

    @classmethod
    def on_modes(cls, kind, n, modes, weights=None, **params) -> "Observable":
        """Build from 1-based modes: one direction per mode for ``product_sigmoid``,
        otherwise a single direction ``sum_i weight_i e_{mode_i}``."""
        weights = [1.0] * len(modes) if weights is None else list(weights)
        if len(weights) != len(modes):
            raise ValueError("modes and weights differ in length")
        if any(not 1 <= m <= n for m in modes):
            raise ValueError(f"observable modes must lie in 1..{n}")
        if kind == "product_sigmoid":
            H = np.zeros((len(modes), n))
            for i, (m, w) in enumerate(zip(modes, weights)):
                H[i, m - 1] = w
        else:
            H = np.zeros((1, n))
            for m, w in zip(modes, weights):
                H[0, m - 1] += w
        return cls(kind, H, **params)

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    @property
    def bounded(self) -> bool:
        return self.kind in BOUNDED_KINDS

    @property
    def smooth(self) -> bool:
        return self.kind != "step"

    @property
    def sup_abs(self) -> float:
        k = self.kind
        if k == "constant":
            return abs(self.offset)
        if k in ("cosine", "tanh", "floor_shifted", "step"):
            return max(abs(self.offset) + abs(self.scale), self.floor if k == "floor_shifted" else 0.0)
        if k == "product_sigmoid":
            return 1.0
        if k == "capped_exp":
            return max(abs(self.offset), abs(self.offset + self.scale))
        return math.inf

    @property
    def inf_value(self) -> float:
        k = self.kind
        if k == "constant":
            return self.offset
        if k in ("cosine", "tanh"):
            return self.offset - abs(self.scale)
        if k == "floor_shifted":
            return max(self.offset - abs(self.scale), self.floor)
        if k == "step":
            return self.offset + min(0.0, self.scale)
        if k in ("product_sigmoid", "capped_exp"):
            return self.offset if k == "capped_exp" else 0.0
        return -math.inf

    def project(self, x):
        return np.asarray(x, dtype=float) @ self.directions.T

    def g(self, z):
        k = self.kind
        z1 = z[..., 0]
        if k == "constant":
            return np.full(z.shape[:-1], float(self.offset))
        if k == "cosine":
            return self.offset + self.scale * np.cos(z1 + self.phase)
        if k == "tanh":
            return self.offset + self.scale * np.tanh(self.steep * (z1 - self.center))
        if k == "product_sigmoid":
            return np.prod(expit(self.steep * (z - self.center)), axis=-1)
        if k == "floor_shifted":
            return np.maximum(self.offset + self.scale * np.cos(z1 + self.phase), self.floor)
        if k == "step":
            return self.offset + self.scale * (z1 > self.center)
        if k == "capped_exp":
            return self.offset + np.minimum(self._exp(z1), self.scale)
        if k == "linear":
            return z1.copy()
        return z1 * z1

    def dg(self, z):
        """Gradient of ``g`` in ``z``, shape ``(..., m)``."""
        k = self.kind
        z1 = z[..., :1]
        if k == "constant":
            return np.zeros_like(z)
        if k == "cosine":
            return -self.scale * np.sin(z1 + self.phase)
        if k == "tanh":
            th = np.tanh(self.steep * (z1 - self.center))
            return self.scale * self.steep * (1.0 - th * th)
        if k == "product_sigmoid":
            s = expit(self.steep * (z - self.center))
            total = np.prod(s, axis=-1, keepdims=True)
            return total * self.steep * (1.0 - s)
        if k == "floor_shifted":
            inner = self.offset + self.scale * np.cos(z1 + self.phase)
            return np.where(inner > self.floor, -self.scale * np.sin(z1 + self.phase), 0.0)
        if k == "capped_exp":
            e = self._exp(z1)
            return np.where(e < self.scale, self.steep * e, 0.0)
        if k == "linear":
            return np.ones_like(z1)
        if k == "quadratic":
            return 2.0 * z1
        raise ValueError("step observables have no gradient")

    def d2g(self, z):
        """Hessian of ``g`` in ``z``, shape ``(..., m, m)``."""
        k = self.kind
        z1 = z[..., :1, None]
        if k in ("constant", "linear"):
            return np.zeros(z.shape + (z.shape[-1],))
        if k == "cosine":
            return -self.scale * np.cos(z1 + self.phase)
        if k == "tanh":
            th = np.tanh(self.steep * (z1 - self.center))
            return -2.0 * self.scale * self.steep**2 * th * (1.0 - th * th)
        if k == "product_sigmoid":
            s = expit(self.steep * (z - self.center))
            total = np.prod(s, axis=-1)[..., None, None]
            d = self.steep * (1.0 - s)
            hess = total * d[..., :, None] * d[..., None, :]
            diag = total[..., 0] * self.steep**2 * (1.0 - s) * (1.0 - 2.0 * s)
            idx = np.arange(z.shape[-1])
            hess[..., idx, idx] = diag
            return hess
        if k == "floor_shifted":
            inner = self.offset + self.scale * np.cos(z1 + self.phase)
            return np.where(inner > self.floor, -self.scale * np.cos(z1 + self.phase), 0.0)
        if k == "capped_exp":
            e = self._exp(z1)
            return np.where(e < self.scale, self.steep**2 * e, 0.0)
        if k == "quadratic":
            return np.full(z.shape[:-1] + (1, 1), 2.0)
        raise ValueError("step observables have no Hessian")

    def _exp(self, z1):
        # clip the exponent so the cap is reached without overflow
        return np.exp(np.minimum(self.steep * (z1 - self.center), math.log(self.scale) + 1.0))

    def __call__(self, x):
        return self.g(self.project(x))

    def grad(self, x):
        """Euclidean gradient ``D phi(x)``."""
        return self.dg(self.project(x)) @ self.directions

    def cm_grad_norm(self, pair: OperatorPair, x):
        """``|D_C phi(x)|_C = |C^{1/2} D phi(x)|`` since ``D_C phi = C D phi``."""
        return np.sqrt(np.sum(pair.c * self.grad(x) ** 2, axis=-1))

    def trace_C_hessian(self, pair: OperatorPair, x):
        """``Tr[C D^2 phi(x)] = sum_ij g_ij <h_i, C h_j>``."""
        gram = (self.directions * pair.c) @ self.directions.T
        return np.sum(self.d2g(self.project(x)) * gram, axis=(-2, -1))

    def truncate(self, n: int) -> "Observable":
        H = self.directions
        if np.any(H[:, n:]):
            raise ValueError("observable directions are not supported on the first n modes")
        return Observable(self.kind, H[:, :n], self.offset, self.scale, self.phase,
                          self.steep, self.center, self.floor)

    def extend(self, n: int) -> "Observable":
        H = np.zeros((self.directions.shape[0], n))
        m = min(n, self.n)
        H[:, :m] = self.directions[:, :m]
        if np.any(self.directions[:, m:]):
            raise ValueError("cannot shrink observable support")
        return Observable(self.kind, H, self.offset, self.scale, self.phase,
                          self.steep, self.center, self.floor)

    def describe(self) -> dict:
        return {"kind": self.kind, "directions": self.directions.tolist(), "offset": self.offset,
                "scale": self.scale, "phase": self.phase, "steep": self.steep,
                "center": self.center, "floor": self.floor}


@dataclass
class Estimate:
    mean: float
    stderr: float
    M: int
    seed: int | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, values, seed=None, keep=True) -> "Estimate":
        v = np.asarray(values, dtype=float)
        M = v.size
        sd = float(np.std(v, ddof=1)) if M > 1 else 0.0
        return cls(float(np.mean(v)), sd / math.sqrt(M), M, seed, v if keep else None)

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "M": self.M, "seed": self.seed}


@dataclass
class Setup:
    """Model, drift and discretisation shared by the estimators.

    With ``F = 0`` and ``exact`` set, endpoints are exact Gaussian draws and
    ``dt`` is unused.
    """

    pair: OperatorPair
    drift: Drift
    dt: float = 0.01
    scheme: str = "exponential"
    exact: bool = True
    chunk: int = 25_000

    def __post_init__(self):
        if self.drift.n != self.pair.n:
            raise ValueError("drift and model dimensions differ")

    def ou_pair(self) -> OperatorPair | None:
        """Pair whose OU process equals the model when ``F`` is zero or linear."""
        d = self.drift
        if isinstance(d, ZeroDrift):
            return self.pair
        if isinstance(d, LinearDrift):
            a = self.pair.a - d.zeta
            if np.all(a > 0):
                return replace(self.pair, a=a)
        return None

    @property
    def is_ou(self) -> bool:
        return self.exact and self.ou_pair() is not None

    def describe(self) -> dict:
        return {"model": self.pair.describe(), "drift": self.drift.describe(), "dt": self.dt,
                "scheme": self.scheme, "exact_ou": self.is_ou}


def endpoint_samples(setup: Setup, starts, times, M: int, seed: int, path_offset: int = 0,
                     stream: str = "increments"):
    """States at each of ``times`` from each start, under common noise.

    Returns ``(S, M, len(times), n)``.  Exact OU draws reuse the same
    standard normals for every start and time.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    times = [float(t) for t in np.atleast_1d(times)]
    if any(t <= 0 for t in times):
        raise ValueError("times must be positive")
    plan = NoisePlan(seed, M, path_offset, STREAMS[stream])
    if setup.is_ou:
        ou = setup.ou_pair()
        out = np.empty((starts.shape[0], M, len(times), setup.pair.n))
        for j, t in enumerate(times):
            for s, x in enumerate(starts):
                out[s, :, j] = ou_exact_sample(ou, x, t, plan)
        return out
    grid = TimeGrid.with_dt(max(times), setup.dt)
    states, rec = simulate_endpoints(setup.pair, setup.drift, starts, grid, plan, setup.scheme,
                                     record=times, chunk=setup.chunk)
    idx = [int(np.argmin(np.abs(rec - t))) for t in times]
    return states[:, :, idx]


def estimate_Pt(setup: Setup, phi: Observable, x, t: float, M: int, seed: int) -> Estimate:
    """Sample mean of ``phi(X(t, x))`` over ``M`` paths."""
    if M < 100:
        raise ValueError("M must be at least 100")
    if not t > 0:
        raise ValueError("t must be positive")
    X = endpoint_samples(setup, x, [t], M, seed)[0, :, 0]
    return Estimate.from_samples(phi(X), seed)


def apply_generator(setup: Setup, phi: Observable, x) -> float:
    """``N phi(x) = 1/2 Tr[C D^2 phi(x)] + <A x + F(x), D phi(x)>``."""
    if not phi.smooth:
        raise ValueError("generator needs a twice differentiable observable")
    x = np.asarray(x, dtype=float)
    b = setup.pair.apply_A(x) + setup.drift.eval(x)
    return float(0.5 * phi.trace_C_hessian(setup.pair, x) + b @ phi.grad(x))


def generator_consistency(setup: Setup, phi: Observable, x, dts, M0: float = 1e3, seed: int = 0,
                          M_cap: int = 20_000_000) -> dict:
    """Difference quotients ``(P(dt) phi(x) - phi(x)) / dt`` against ``N phi(x)``.

    Each ``dt`` uses ``M = M0 / dt^2`` paths (one exponential step, or an
    exact draw for ``F = 0``), so the Monte Carlo error shrinks like the bias.
    """
    dts = [float(d) for d in dts]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("dts must be decreasing")
    x = np.asarray(x, dtype=float)
    target = apply_generator(setup, phi, x)
    phi_x = float(phi(x))
    rows = []
    for dt in dts:
        M = int(min(M_cap, math.ceil(M0 / dt**2)))
        local = Setup(setup.pair, setup.drift, dt, setup.scheme, setup.exact, setup.chunk)
        est = estimate_Pt(local, phi, x, dt, M, seed)
        q = (est.mean - phi_x) / dt
        rows.append({"dt": dt, "M": M, "quotient": q, "stderr": est.stderr / dt,
                     "error": abs(q - target)})
    ratios = [a["error"] / b["error"] if b["error"] > 0 else math.inf for a, b in zip(rows, rows[1:])]
    return {"generator": target, "rows": rows, "ratios": ratios}


def directional_derivative_Pt(setup: Setup, phi: Observable, x, t: float, h, fd_step: float = 1e-2,
                              M: int = 100_000, seed: int = 0) -> Estimate:
    """Central difference of ``P(t) phi`` along ``h / |h|_C`` with common random numbers.

    Estimates ``[D_C P(t) phi(x), h]_C / |h|_C = <D P(t) phi(x), h> / |h|_C``.
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    h = np.asarray(h, dtype=float)
    hn = float(cm_norm(setup.pair, h))
    x = np.asarray(x, dtype=float)
    if hn == 0:
        return Estimate(0.0, 0.0, M, seed, np.zeros(M))
    u = h / hn
    X = endpoint_samples(setup, np.stack([x + fd_step * u, x - fd_step * u]), [t], M, seed)[:, :, 0]
    q = (phi(X[0]) - phi(X[1])) / (2.0 * fd_step)
    return Estimate.from_samples(q, seed)


def sample_invariant(setup: Setup, burn_in: float, M: int, seed: int) -> np.ndarray:
    """Approximate draws from the invariant law.

    ``F = 0`` gives exact draws from ``N(0, diag(c_k / (2 a_k)))`` (rates
    shifted by ``zeta`` for a linear drift).  Otherwise
    paths start from that Gaussian and run for ``burn_in``.
    """
    pair = setup.ou_pair() if setup.is_ou else setup.pair
    plan = NoisePlan(seed, M, 0, STREAMS["invariant"])
    gauss = np.sqrt(pair.invariant_variance) * plan.increments(0, pair.n)
    if setup.is_ou or burn_in <= 0:
        return gauss
    grid = TimeGrid.with_dt(burn_in, setup.dt)
    plan = NoisePlan(seed, M, 0, STREAMS["start"])
    return simulate_from_starts(pair, setup.drift, gauss, grid, plan, setup.scheme, setup.chunk)


# ---------------------------------------------------------------- OU oracles

def ou_projection_moments(pair: OperatorPair, x, t: float, h):
    """Mean and variance of ``<X(t, x), h>`` for ``F = 0``."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    mean = float(np.exp(-pair.a * t) * x @ h)
    var = float(np.sum(h * h * pair.ou_variance(t)))
    return mean, var


def ou_cosine_mean(pair: OperatorPair, x, t: float, h, phase: float = 0.0) -> float:
    """``E cos(<X(t,x), h> + phase) = exp(-Var/2) cos(mean + phase)``."""
    m, v = ou_projection_moments(pair, x, t, h)
    return math.exp(-0.5 * v) * math.cos(m + phase)


def gauss_expect(mean: float, var: float, g, nodes: int = 200) -> float:
    """``E g(mean + sqrt(var) Z)`` by Gauss-Hermite quadrature."""
    y, w = np.polynomial.hermite.hermgauss(nodes)
    return float(np.sum(w * g(mean + math.sqrt(2.0 * var) * y)) / math.sqrt(math.pi))


def ou_expect(pair: OperatorPair, phi: Observable, x, t: float, transform=None, nodes: int = 200) -> float:
    """``E transform(phi(X(t, x)))`` for one-direction observables and ``F = 0``."""
    if phi.directions.shape[0] != 1:
        raise ValueError("quadrature oracle covers one-direction observables")
    tr = transform or (lambda v: v)
    m, v = ou_projection_moments(pair, x, t, phi.directions[0])
    if v == 0:
        return float(tr(phi.g(np.array([[m]])))[0])
    return gauss_expect(m, v, lambda z: tr(phi.g(z[:, None])), nodes)
