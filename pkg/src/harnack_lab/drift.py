"""Nonlinear drifts ``F`` in spectral coordinates, with Yosida regularisation.

Every drift evaluates on stacked inputs of shape ``(..., n)``.  Each one
declares ``zeta_F``, the constant for which ``F - zeta_F Id`` is
dissipative, and growth constants ``(M, m)`` with ``|F(x)| <= M (1 + |x|^m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_model import OperatorPair

__all__ = [
    "Drift",
    "ZeroDrift",
    "LinearDrift",
    "ComposedDrift",
    "CubicKernelDrift",
    "ReactionDiffusionDrift",
    "YosidaWrapped",
    "BasisTransform",
    "YosidaNonConvergence",
    "PHI_CATALOGUE",
    "cubic_u_profile",
    "yosida_window",
    "yosida_resolvent",
    "yosida_drift",
    "check_dissipativity",
    "check_yosida_rates",
    "uniform_box_sampler",
]

RESIDUAL_TOL = 1e-10
MAX_ITER = 200


class YosidaNonConvergence(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class Drift:
    """Base class; subclasses fill in ``eval`` and ``jacobian_action``."""

    name = "drift"
    zeta_F = 0.0
    growth = (0.0, 1)
    lipschitz: float | None = None

    def __init__(self, n: int):
        self.n = int(n)

    def eval(self, x):
        raise NotImplementedError

    def jacobian_action(self, x, h):
        raise NotImplementedError

    def jacobian_matrix(self, x):
        """Stacked ``(..., n, n)`` Jacobians assembled column by column."""
        x = np.asarray(x, dtype=float)
        cols = []
        for k in range(self.n):
            e = np.zeros_like(x)
            e[..., k] = 1.0
            cols.append(self.jacobian_action(x, e))
        return np.stack(cols, axis=-1)

    def e_norm(self, x):
        """Norm of the Banach space ``E``; Euclidean unless the drift lives on a grid."""
        return np.linalg.norm(x, axis=-1)

    def truncate(self, n: int, pair: OperatorPair | None = None) -> "Drift":
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.name, "zeta_F": self.zeta_F}

    # Subclasses with a closed-form resolvent override this; ``None`` means
    # use the generic Newton solver.
    def _resolvent(self, delta, x):
        return None


class ZeroDrift(Drift):
    name = "zero"
    lipschitz = 0.0

    def eval(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jacobian_action(self, x, h):
        return np.zeros_like(np.asarray(h, dtype=float))

    def truncate(self, n, pair=None):
        return ZeroDrift(n)

    def _resolvent(self, delta, x):
        return np.array(x, dtype=float)


class LinearDrift(Drift):
    name = "linear"

    def __init__(self, n, zeta):
        super().__init__(n)
        self.zeta = float(zeta)
        self.zeta_F = self.zeta
        self.lipschitz = abs(self.zeta)
        self.growth = (abs(self.zeta), 1)

    def eval(self, x):
        return self.zeta * np.asarray(x, dtype=float)

    def jacobian_action(self, x, h):
        return self.zeta * np.asarray(h, dtype=float)

    def truncate(self, n, pair=None):
        return LinearDrift(n, self.zeta)

    def describe(self):
        return {"kind": self.name, "zeta": self.zeta, "zeta_F": self.zeta_F}

    def _resolvent(self, delta, x):
        return np.array(x, dtype=float)


def _dst_matrix(n):
    j = np.arange(1, n + 1)
    return math.sqrt(2.0 / (n + 1)) * np.sin(np.outer(j, j) * math.pi / (n + 1))


class ComposedDrift(Drift):
    """``F = C^{1/2} G`` with ``G(x) = L_G R tanh(R^T x + shift)``.

    ``R`` is the orthonormal DST-I matrix when ``mix`` is set (couples all
    modes) and the identity otherwise; either way ``G`` is ``L_G``-Lipschitz.
    """

    name = "composed"

    def __init__(self, pair: OperatorPair, L_G, mix=True, shift=0.0):
        super().__init__(pair.n)
        self.pair = pair
        self.L_G = float(L_G)
        self.mix = bool(mix)
        self.shift = float(shift)
        self._R = _dst_matrix(self.n) if self.mix else np.eye(self.n)
        self._sqrt_c = np.sqrt(pair.c)
        norm_c = pair.sqrt_c_norm
        self.lipschitz = norm_c * self.L_G
        self.zeta_F = self.lipschitz
        self.growth = (norm_c * self.L_G * math.sqrt(self.n), 1)

    def G(self, x):
        z = np.asarray(x, dtype=float) @ self._R + self.shift
        return self.L_G * (np.tanh(z) @ self._R.T)

    def eval(self, x):
        return self._sqrt_c * self.G(x)

    def jacobian_action(self, x, h):
        z = np.asarray(x, dtype=float) @ self._R + self.shift
        w = 1.0 - np.tanh(z) ** 2
        return self._sqrt_c * (self.L_G * ((w * (np.asarray(h, dtype=float) @ self._R)) @ self._R.T))

    def jacobian_matrix(self, x):
        z = np.asarray(x, dtype=float) @ self._R + self.shift
        w = 1.0 - np.tanh(z) ** 2
        inner = np.matmul(self._R * w[..., None, :], self._R.T)
        return self.L_G * self._sqrt_c[:, None] * inner

    def truncate(self, n, pair=None):
        if pair is None or pair.n != n:
            raise ValueError("composed drift needs the truncated operator pair")
        return ComposedDrift(pair, self.L_G, self.mix, self.shift)

    def describe(self):
        return {"kind": self.name, "L_G": self.L_G, "mix": self.mix, "shift": self.shift,
                "zeta_F": self.zeta_F}


def cubic_u_profile(n, profile="constant", mode=None):
    """Coefficients of the kernel direction ``u`` on the first ``n`` modes.

    ``profile="mode"`` gives the eigenvector ``e_mode``.  ``"constant"`` is
    the function ``u = 1`` on ``[0, 1]``, whose sine coefficients are
    ``2 sqrt(2) / (k pi)`` for odd ``k``; its full-space norm is 1, so the
    truncated vector has norm slightly below 1.
    """
    u = np.zeros(n)
    if profile == "mode":
        if mode is None or not 1 <= mode <= n:
            raise ValueError("u_mode must lie in 1..n")
        u[mode - 1] = 1.0
        return u
    if profile == "constant":
        k = np.arange(1, n + 1)
        odd = k % 2 == 1
        u[odd] = 2.0 * math.sqrt(2.0) / (k[odd] * math.pi)
        return u
    raise ValueError(f"unknown u profile {profile!r}")


class CubicKernelDrift(Drift):
    """``F(x) = -kappa <u, x>^3 u + zeta_F x``.

    The rank-one kernel ``K = -kappa u(.)u(.)u(.)u(.)`` of the cubic
    polynomial drift; ``<V(h, x, x), h> = -kappa <u,x>^2 <u,h>^2 <= 0``.
    """

    name = "cubic"

    def __init__(self, n, kappa, zeta_F=0.0, u=None, profile="mode", u_mode=1):
        super().__init__(n)
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        self.kappa = float(kappa)
        self.zeta_F = float(zeta_F)
        self.profile = profile
        self.u_mode = u_mode
        self.u = cubic_u_profile(n, profile, u_mode) if u is None else np.asarray(u, dtype=float)
        self.growth = (self.kappa + abs(self.zeta_F), 3)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        s = x @ self.u
        return -self.kappa * (s**3)[..., None] * self.u + self.zeta_F * x

    def jacobian_action(self, x, h):
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        s = x @ self.u
        sh = h @ self.u
        return -3.0 * self.kappa * (s**2 * sh)[..., None] * self.u + self.zeta_F * h

    def jacobian_matrix(self, x):
        s = np.asarray(x, dtype=float) @ self.u
        uu = np.outer(self.u, self.u)
        return -3.0 * self.kappa * (s**2)[..., None, None] * uu + self.zeta_F * np.eye(self.n)

    def truncate(self, n, pair=None):
        if self.profile == "mode":
            return CubicKernelDrift(n, self.kappa, self.zeta_F, profile="mode", u_mode=self.u_mode)
        return CubicKernelDrift(n, self.kappa, self.zeta_F, profile=self.profile)

    def describe(self):
        return {"kind": self.name, "kappa": self.kappa, "zeta_F": self.zeta_F,
                "profile": self.profile, "u_mode": self.u_mode}

    def _resolvent(self, delta, x):
        # y = x - delta kappa s^3 u with s = <u, y> solving
        # s + delta kappa |u|^2 s^3 = <u, x>; Newton from s = <u, x> is
        # monotone for this convex-odd scalar equation.
        x = np.asarray(x, dtype=float)
        b = x @ self.u
        q = delta * self.kappa * float(self.u @ self.u)
        s = np.array(b, dtype=float)
        for _ in range(MAX_ITER):
            g = s + q * s**3 - b
            step = g / (1.0 + 3.0 * q * s**2)
            s = s - step
            if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(s))):
                break
        return x - delta * self.kappa * (s**3)[..., None] * self.u


class BasisTransform:
    """Sine-basis evaluation ``e_k(xi_j) = sqrt(2) sin(k pi xi_j)`` on interior points.

    With ``xi_j = j / (size + 1)`` the discrete sine transform is exactly
    orthogonal, so the round trip is exact for up to ``size`` coefficients.
    """

    def __init__(self, size, n):
        if n > size:
            raise ValueError("grid must have at least as many points as modes")
        self.size = int(size)
        self.n = int(n)
        self.xi = np.arange(1, size + 1) / (size + 1)
        k = np.arange(1, n + 1)
        self.matrix = math.sqrt(2.0) * np.sin(math.pi * np.outer(self.xi, k))

    def to_grid(self, coeffs):
        return np.asarray(coeffs, dtype=float) @ self.matrix.T

    def to_spectral(self, values):
        return np.asarray(values, dtype=float) @ self.matrix / (self.size + 1)


# phi(s) = -c3 s^3 - c1 s; decreasing, |phi'| <= (3 c3 + c1)(1 + s^2).
PHI_CATALOGUE = {
    "cubic": (1.0, 0.0),
    "cubic_linear": (1.0, 1.0),
}


class ReactionDiffusionDrift(Drift):
    """Pointwise ``[F(f)](xi) = phi(f(xi)) - (coeff/2) f(xi)^2`` projected on the sine modes.

    ``coeff`` is the coefficient of the quadratic term.  For
    ``phi(s) = -c3 s^3 - c1 s`` the pair identity
    ``(F(a)-F(b))(a-b) = -(a-b)^2 [c3 (a^2+ab+b^2) + c1 + coeff (a+b)/2]``
    is at most ``(coeff^2 / (12 c3) - c1)(a-b)^2``, which is the declared
    ``zeta_F``.  The grid is fine enough that the projection of a cubic in
    ``n`` modes has no aliasing, so the bound carries over exactly.
    """

    name = "reaction_diffusion"

    def __init__(self, n, coeff, phi="cubic", grid_size=None):
        super().__init__(n)
        if phi not in PHI_CATALOGUE:
            raise ValueError(f"unknown phi {phi!r}; choose from {sorted(PHI_CATALOGUE)}")
        if coeff <= 0:
            raise ValueError("quadratic coefficient must be positive")
        self.coeff = float(coeff)
        self.phi_id = phi
        self.c3, self.c1 = PHI_CATALOGUE[phi]
        self.grid_size = int(grid_size) if grid_size else 4 * n + 1
        self.basis = BasisTransform(self.grid_size, n)
        self.zeta_F = self.coeff**2 / (12.0 * self.c3) - self.c1
        self.growth = (self.c3 + self.c1 + self.coeff / 2.0, 3)

    def phi(self, s):
        return -self.c3 * s * s * s - self.c1 * s

    def dphi(self, s):
        return -3.0 * self.c3 * s * s - self.c1

    def pointwise(self, f):
        return self.phi(f) - 0.5 * self.coeff * f**2

    def eval(self, x):
        f = self.basis.to_grid(x)
        return self.basis.to_spectral(self.pointwise(f))

    def jacobian_action(self, x, h):
        f = self.basis.to_grid(x)
        g = self.basis.to_grid(h)
        return self.basis.to_spectral((self.dphi(f) - self.coeff * f) * g)

    def jacobian_matrix(self, x):
        f = self.basis.to_grid(x)
        w = (self.dphi(f) - self.coeff * f) / (self.grid_size + 1)
        E = self.basis.matrix
        return np.matmul(E.T, w[..., :, None] * E)

    def e_norm(self, x):
        return np.max(np.abs(self.basis.to_grid(x)), axis=-1)

    def truncate(self, n, pair=None):
        return ReactionDiffusionDrift(n, self.coeff, self.phi_id)

    def describe(self):
        return {"kind": self.name, "phi": self.phi_id, "coeff": self.coeff,
                "grid": self.grid_size, "zeta_F": self.zeta_F}


def yosida_window(drift: Drift) -> float:
    """Upper end of the admissible ``delta`` range, ``1/|zeta_F|`` (``inf`` if zero)."""
    z = abs(drift.zeta_F)
    return math.inf if z == 0 else 1.0 / z


def _check_delta(drift, delta):
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not delta < yosida_window(drift):
        raise ValueError(f"delta={delta} outside (0, 1/|zeta_F|) = (0, {yosida_window(drift)})")


def _residual(drift, delta, y, x):
    return y - delta * (drift.eval(y) - drift.zeta_F * y) - x


def _newton_resolvent(drift, delta, x):
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, drift.n)
    y = flat.copy()
    r = _residual(drift, delta, y, flat)
    rn = np.linalg.norm(r, axis=-1)
    eye = np.eye(drift.n)
    for _ in range(MAX_ITER):
        active = rn > RESIDUAL_TOL * 1e-2
        if not np.any(active):
            break
        ya, ra, rna = y[active], r[active], rn[active]
        jac = (1.0 + delta * drift.zeta_F) * eye - delta * drift.jacobian_matrix(ya)
        step = np.linalg.solve(jac, -ra[..., None])[..., 0]
        lam = np.ones(len(ya))
        accepted = np.zeros(len(ya), dtype=bool)
        new_y, new_r, new_rn = ya.copy(), ra.copy(), rna.copy()
        for _damp in range(12):
            todo = ~accepted
            if not np.any(todo):
                break
            cand = ya[todo] + lam[todo, None] * step[todo]
            cr = _residual(drift, delta, cand, flat[active][todo])
            crn = np.linalg.norm(cr, axis=-1)
            ok = crn < rna[todo]
            idx = np.flatnonzero(todo)[ok]
            new_y[idx], new_r[idx], new_rn[idx] = cand[ok], cr[ok], crn[ok]
            accepted[idx] = True
            lam[todo] *= 0.5
        # Fallback for rows where no damped Newton step reduced the residual:
        # relaxed fixed-point steps y <- y - w R(y), which contract because
        # R is strongly monotone.
        stuck = np.flatnonzero(~accepted)
        for i in stuck:
            yi, ri, rni = ya[i], ra[i], rna[i]
            w = 1.0
            for _ in range(40):
                cand = yi - w * ri
                cr = _residual(drift, delta, cand[None], flat[active][i][None])[0]
                if np.linalg.norm(cr) < rni:
                    new_y[i], new_r[i], new_rn[i] = cand, cr, np.linalg.norm(cr)
                    break
                w *= 0.5
        y[active], r[active], rn[active] = new_y, new_r, new_rn
        if np.all(~accepted & (new_rn >= rna)):
            break
    worst = float(rn.max()) if rn.size else 0.0
    if worst > RESIDUAL_TOL:
        raise YosidaNonConvergence("Yosida resolvent did not converge", worst)
    return y.reshape(x.shape)


def yosida_resolvent(drift: Drift, delta: float, x):
    """Solve ``y - delta (F(y) - zeta_F y) = x`` for every stacked ``x``."""
    _check_delta(drift, delta)
    x = np.asarray(x, dtype=float)
    y = drift._resolvent(delta, x)
    if y is None:
        return _newton_resolvent(drift, delta, x)
    res = np.linalg.norm(_residual(drift, delta, y, x), axis=-1)
    worst = float(np.max(res)) if res.size else 0.0
    if worst > RESIDUAL_TOL:
        # Closed-form path lost accuracy (very large inputs); polish with Newton.
        return _newton_resolvent(drift, delta, x)
    return y


def yosida_drift(drift: Drift, delta: float, x):
    """Yosida approximant ``F_delta(x) = F(J_delta(x))``."""
    return drift.eval(yosida_resolvent(drift, delta, x))


class YosidaWrapped(Drift):
    """Drift ``F_delta`` built from a base drift; globally Lipschitz with ``2/delta + |zeta_F|``."""

    name = "yosida"

    def __init__(self, base: Drift, delta: float):
        super().__init__(base.n)
        _check_delta(base, delta)
        self.base = base
        self.delta = float(delta)
        self.zeta_F = base.zeta_F
        self.growth = base.growth
        self.lipschitz = 2.0 / self.delta + abs(base.zeta_F)

    def resolvent(self, x):
        return yosida_resolvent(self.base, self.delta, x)

    def eval(self, x):
        return self.base.eval(self.resolvent(x))

    def jacobian_action(self, x, h):
        # D F_delta(x) = DF(J) [(1 + delta zeta) I - delta DF(J)]^{-1}
        y = self.resolvent(x)
        jac = (1.0 + self.delta * self.zeta_F) * np.eye(self.n) - self.delta * self.base.jacobian_matrix(y)
        dj = np.linalg.solve(jac, np.asarray(h, dtype=float)[..., None])[..., 0]
        return self.base.jacobian_action(y, dj)

    def e_norm(self, x):
        return self.base.e_norm(x)

    def truncate(self, n, pair=None):
        return YosidaWrapped(self.base.truncate(n, pair), self.delta)

    def describe(self):
        return {"kind": self.name, "delta": self.delta, "base": self.base.describe(),
                "zeta_F": self.zeta_F}


def uniform_box_sampler(low=-5.0, high=5.0):
    def sample(rng, size, n):
        return rng.uniform(low, high, size=(size, n))
    return sample


def check_dissipativity(drift: Drift, zeta: float, sampler=None, trials: int = 10_000,
                        seed: int = 0, pair: OperatorPair | None = None) -> dict:
    """Largest ``<F(x)-F(y), x-y> - zeta |x-y|^2`` over sampled pairs.

    With ``pair`` given the inner product and norm are those of ``H_C``.
    PASS when every pair satisfies the bound up to ``1e-9 (1 + |x-y|^2)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    sampler = sampler or uniform_box_sampler()
    rng = np.random.default_rng(seed)
    x = sampler(rng, trials, drift.n)
    y = sampler(rng, trials, drift.n)
    d = x - y
    dF = drift.eval(x) - drift.eval(y)
    w = 1.0 / pair.c if pair is not None else 1.0
    inner = np.sum(dF * d * w, axis=-1)
    dist2 = np.sum(d * d * w, axis=-1)
    violation = inner - zeta * dist2
    slack = violation - 1e-9 * (1.0 + dist2)
    worst = int(np.argmax(violation))
    return {
        "max_violation": float(violation[worst]),
        "passed": bool(np.all(slack <= 0)),
        "trials": trials,
        "zeta": zeta,
        "norm": "C" if pair is not None else "X",
        "worst_pair": (x[worst].tolist(), y[worst].tolist()),
    }


def check_yosida_rates(drift: Drift, y, deltas, M: float | None = None, m: int | None = None,
                       probes: int = 10_000, seed: int = 0, sampler=None) -> dict:
    """Quantitative Yosida estimates at ``y`` for each ``delta``.

    (a) ``|J_delta(y) - y|_E <= delta (M + M |y|_E^m + |zeta_F| |y|_E)``;
    (b) Lipschitz quotients of ``F_delta`` over random pairs stay below
    ``2/delta + |zeta_F|``; (c) ``|F_delta(y) - F(y)|`` decreases; (d) the
    growth bound ``|F_delta(y)|_E <= (3 + delta|z|)|F(y)|_E + (2|z| + delta z^2)|y|_E``.
    Each bound is also evaluated with the signed ``zeta_F`` and reported
    under ``literal_*`` so sign-sensitive instances are visible.
    """
    if M is None or m is None:
        M, m = drift.growth
    y = np.asarray(y, dtype=float)
    z = drift.zeta_F
    az = abs(z)
    sampler = sampler or uniform_box_sampler()
    rng = np.random.default_rng(seed)
    x1 = sampler(rng, probes, drift.n)
    x2 = sampler(rng, probes, drift.n)
    Fy = drift.eval(y)
    ye = float(drift.e_norm(y))
    Fye = float(drift.e_norm(Fy))
    rows = []
    for delta in deltas:
        J = yosida_resolvent(drift, delta, y)
        jump = float(drift.e_norm(J - y))
        bound_a = delta * (M + M * ye**m + az * ye)
        literal_a = delta * (M + M * ye**m + z * ye)
        Fd = drift.eval(J)
        err = float(np.linalg.norm(Fd - Fy))
        Fde = float(drift.e_norm(Fd))
        bound_d = (3 + delta * az) * Fye + (2 * az + delta * z * z) * ye
        literal_d = (3 + delta * z) * Fye + (2 * z + delta * z * z) * ye
        q = (np.linalg.norm(yosida_drift(drift, delta, x1) - yosida_drift(drift, delta, x2), axis=-1)
             / np.linalg.norm(x1 - x2, axis=-1))
        lip_bound = 2.0 / delta + az
        literal_lip = 2.0 / delta + z
        qmax = float(q.max())
        rows.append({
            "delta": float(delta),
            "jump": jump,
            "jump_bound": bound_a,
            "jump_ok": jump <= bound_a * (1 + 1e-12),
            "literal_jump_ok": jump <= literal_a * (1 + 1e-12),
            "drift_error": err,
            "growth": Fde,
            "growth_bound": bound_d,
            "growth_ok": Fde <= bound_d * (1 + 1e-12),
            "literal_growth_ok": Fde <= literal_d * (1 + 1e-12),
            "lip_max": qmax,
            "lip_bound": lip_bound,
            "lip_ok": qmax <= lip_bound * (1 + 1e-12),
            "literal_lip_ok": qmax <= literal_lip * (1 + 1e-12),
        })
    errs = [r["drift_error"] for r in rows]
    decreasing = all(b <= a for a, b in zip(errs, errs[1:]))
    passed = decreasing and all(r["jump_ok"] and r["lip_ok"] and r["growth_ok"] for r in rows)
    return {
        "rows": rows,
        "error_decreasing": decreasing,
        "passed": passed,
        "literal_flags": [r["delta"] for r in rows
                          if not (r["literal_jump_ok"] and r["literal_lip_ok"] and r["literal_growth_ok"])],
        "M": M,
        "m": m,
    }
