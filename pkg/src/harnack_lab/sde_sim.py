"""Exponential-Euler simulation of the truncated SDE and its derived flows.

One step advances every mode with its exact linear part and exact OU noise::

    x'_j = exp(-a_j dt) x_j + psi_j(dt) F_j(x) + xi_j,
    psi_j = (1 - exp(-a_j dt)) / a_j,  Var xi_j = c_j (1 - exp(-2 a_j dt)) / (2 a_j).

Noise comes from :class:`~harnack_lab.rng.NoisePlan`, so every ensemble is a
pure function of ``(model, drift, scheme, seed)`` and of nothing else.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .drift import Drift, YosidaWrapped, ZeroDrift
from .rng import STREAMS, NoisePlan
from .spectral_model import OperatorPair, cm_norm

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "step_coefficients",
    "step_exponential",
    "simulate_endpoints",
    "simulate_ensemble",
    "simulate_from_starts",
    "coupled_paths",
    "variational_flow",
    "ou_exact_sample",
    "model_hash",
    "export_ensemble",
    "load_ensemble",
]

DEFAULT_CHUNK = 25_000


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def step_at(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not (numerically) on the grid."""
        k = round(t / self.dt)
        if abs(k * self.dt - t) > 1e-9 * max(1.0, t) or not 0 <= k <= self.steps:
            raise ValueError(f"time {t} is not on the grid (dt={self.dt})")
        return int(k)

    @classmethod
    def with_dt(cls, t_end: float, dt: float) -> "TimeGrid":
        return cls(t_end, max(1, int(round(t_end / dt))))


def model_hash(pair: OperatorPair, drift: Drift) -> str:
    blob = json.dumps({"model": pair.describe(), "drift": drift.describe()}, sort_keys=True, default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PathEnsemble:
    """Recorded states ``(paths, len(times), n)``; ``states[:, 0]`` is the initial condition."""

    states: np.ndarray
    times: np.ndarray
    grid: TimeGrid
    provenance: dict = field(default_factory=dict)

    @property
    def endpoints(self) -> np.ndarray:
        return self.states[:, -1]

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"time {t} was not recorded")
        return self.states[:, idx[0]]

    def summary(self) -> list[dict]:
        rows = []
        for i, t in enumerate(self.times):
            s = self.states[:, i]
            rows.append({
                "t": float(t),
                "mean_mode1": float(np.mean(s[:, 0])),
                "var_mode1": float(np.var(s[:, 0], ddof=1)) if len(s) > 1 else 0.0,
                "second_moment": float(np.mean(np.sum(s * s, axis=1))),
            })
        return rows


def step_coefficients(pair: OperatorPair, dt: float):
    """``(exp(-a dt), psi(dt), noise sd)`` per mode, evaluated with ``expm1``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = pair.a
    decay = np.exp(-a * dt)
    psi = -np.expm1(-a * dt) / a
    sd = np.sqrt(pair.c * (-np.expm1(-2.0 * a * dt)) / (2.0 * a))
    return decay, psi, sd


def step_exponential(pair: OperatorPair, drift: Drift, x, dt: float, noise):
    """One exponential-Euler step; ``noise`` holds standard normals (scaled here)."""
    decay, psi, sd = step_coefficients(pair, dt)
    x = np.asarray(x, dtype=float)
    return decay * x + psi * drift.eval(x) + sd * np.asarray(noise, dtype=float)


def _stepping_drift(drift: Drift, scheme: str, dt: float) -> Drift:
    if scheme == "exponential":
        return drift
    if scheme == "drift_implicit":
        if isinstance(drift, ZeroDrift):
            return drift
        return YosidaWrapped(drift, dt)
    raise ValueError(f"unknown scheme {scheme!r}")


def _record_steps(grid: TimeGrid, record):
    if record is None:
        return np.arange(grid.steps + 1)
    steps = sorted({grid.step_at(t) for t in record} | {0})
    return np.asarray(steps)


def simulate_endpoints(pair: OperatorPair, drift: Drift, starts, grid: TimeGrid, plan: NoisePlan,
                       scheme: str = "exponential", record=None, chunk: int = DEFAULT_CHUNK):
    """Simulate every path of ``plan`` from each of ``starts`` with common noise.

    ``starts`` has shape ``(S, n)``; the result has shape
    ``(S, paths, R, n)`` where ``R`` indexes the recorded times
    (``record`` is a list of grid times; ``None`` records every step).
    Path ``i`` from every start consumes the same increments, which is the
    synchronous coupling used for all two-point comparisons.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n = pair.n
    if starts.shape[-1] != n or drift.n != n:
        raise ValueError("start points, drift and model must share the dimension")
    rec = _record_steps(grid, record)
    rec_index = {int(s): i for i, s in enumerate(rec)}
    dt = grid.dt
    decay, psi, sd = step_coefficients(pair, dt)
    stepper = _stepping_drift(drift, scheme, dt)
    zero = isinstance(stepper, ZeroDrift)
    S, M = starts.shape[0], plan.paths
    out = np.empty((S, M, len(rec), n))
    for lo in range(0, M, chunk):
        hi = min(M, lo + chunk)
        x = np.repeat(starts[:, None, :], hi - lo, axis=1)
        out[:, lo:hi, 0] = x
        for k in range(1, grid.steps + 1):
            xi = sd * plan.increments(k, n, lo, hi)
            if zero:
                x = decay * x + xi
            else:
                x = decay * x + psi * stepper.eval(x) + xi
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite state at step {k}")
            r = rec_index.get(k)
            if r is not None:
                out[:, lo:hi, r] = x
    return out, grid.times()[rec]


def simulate_ensemble(pair: OperatorPair, drift: Drift, x0, grid: TimeGrid, plan: NoisePlan,
                      scheme: str = "exponential", record=None, chunk: int = DEFAULT_CHUNK) -> PathEnsemble:
    """Ensemble of ``plan.paths`` trajectories started at ``x0``."""
    states, times = simulate_endpoints(pair, drift, np.asarray(x0, dtype=float)[None], grid, plan,
                                       scheme, record, chunk)
    prov = {
        "model": model_hash(pair, drift),
        "drift": drift.describe(),
        "scheme": scheme,
        "seed": plan.seed,
        "stream": plan.stream,
        "path_offset": plan.path_offset,
        "paths": plan.paths,
        "x0": np.asarray(x0, dtype=float).tolist(),
    }
    return PathEnsemble(states[0], times, grid, prov)


def simulate_from_starts(pair: OperatorPair, drift: Drift, starts, grid: TimeGrid, plan: NoisePlan,
                         scheme: str = "exponential", chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Endpoints at ``grid.t_end`` where path ``i`` starts from ``starts[i]``."""
    starts = np.asarray(starts, dtype=float)
    if starts.shape != (plan.paths, pair.n):
        raise ValueError("need one start per path")
    decay, psi, sd = step_coefficients(pair, grid.dt)
    stepper = _stepping_drift(drift, scheme, grid.dt)
    out = np.empty_like(starts)
    for lo in range(0, plan.paths, chunk):
        hi = min(plan.paths, lo + chunk)
        x = starts[lo:hi].copy()
        for k in range(1, grid.steps + 1):
            x = decay * x + psi * stepper.eval(x) + sd * plan.increments(k, pair.n, lo, hi)
        out[lo:hi] = x
    return out


def _difference_flow(pair, drift, x, y, grid, scheme):
    # Noise-free replay of both paths: for additive noise and F = 0 (or linear
    # F) the coupled difference obeys this deterministic recursion.
    decay, psi, _ = step_coefficients(pair, grid.dt)
    stepper = _stepping_drift(drift, scheme, grid.dt)
    d = np.empty((grid.steps + 1, pair.n))
    d[0] = x - y
    for k in range(1, grid.steps + 1):
        d[k] = decay * d[k - 1] + psi * (stepper.eval(d[k - 1]) - stepper.eval(np.zeros(pair.n)))
    return d


def coupled_paths(pair: OperatorPair, drift: Drift, x, y, grid: TimeGrid, plan: NoisePlan,
                  scheme: str = "exponential", zeta_X_lip: float | None = None,
                  zeta_X_diss: float | None = None, tol: float = 1e-10) -> dict:
    """Synchronously coupled paths from ``x`` and ``y`` and their contraction ratios.

    Bounds are checked only when the matching rate is supplied:
    ``norm_ratio <= exp(-zeta_X_lip t)`` and ``cm_ratio <= exp(zeta_X_diss t)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d0 = x - y
    if not np.any(d0):
        raise ValueError("coupled paths need x != y")
    both, times = simulate_endpoints(pair, drift, np.stack([x, y]), grid, plan, scheme)
    diff = both[0] - both[1]
    norm_ratio = np.linalg.norm(diff, axis=-1) / np.linalg.norm(d0)
    cm_ratio = cm_norm(pair, diff) / cm_norm(pair, d0)
    out = {"times": times, "difference": diff, "norm_ratio": norm_ratio, "cm_ratio": cm_ratio}
    if zeta_X_lip is not None:
        bound = np.exp(-zeta_X_lip * times)
        out["norm_bound"] = bound
        out["norm_ok"] = bool(np.all(norm_ratio <= bound * (1 + tol)))
    if zeta_X_diss is not None:
        bound = np.exp(zeta_X_diss * times)
        out["cm_bound"] = bound
        out["cm_ok"] = bool(np.all(cm_ratio <= bound * (1 + tol)))
    if isinstance(drift, ZeroDrift) or drift.name == "linear":
        ref = _difference_flow(pair, drift, x, y, grid, scheme)
        out["flow_mismatch"] = float(np.max(np.abs(diff - ref)))
    return out


def variational_flow(pair: OperatorPair, drift: Drift, base_path, y0, grid: TimeGrid,
                     zeta_X_lip: float | None = None, K1: float | None = None) -> dict:
    """Derivative flow ``Y(t) = D X(t, x) y0`` along a recorded base path.

    Stepped by exponential Euler on ``dY = [A + DF(X(t))] Y dt``, with the
    Jacobian frozen at the left end of each step.  ``base_path`` has shape
    ``(steps + 1, n)`` or ``(paths, steps + 1, n)``.
    """
    base = np.asarray(base_path, dtype=float)
    single = base.ndim == 2
    if single:
        base = base[None]
    if base.shape[1] != grid.steps + 1:
        raise ValueError("base path does not match the grid")
    decay, psi, _ = step_coefficients(pair, grid.dt)
    y0 = np.asarray(y0, dtype=float)
    Y = np.empty_like(base)
    Y[:, 0] = y0
    for k in range(1, grid.steps + 1):
        prev = Y[:, k - 1]
        Y[:, k] = decay * prev + psi * drift.jacobian_action(base[:, k - 1], prev)
    times = grid.times()
    ratio = np.linalg.norm(Y, axis=-1) / np.linalg.norm(y0)
    cm_ratio = cm_norm(pair, Y) / cm_norm(pair, y0)
    out = {
        "times": times,
        "Y": Y[0] if single else Y,
        "ratio": ratio[0] if single else ratio,
        "cm_ratio": cm_ratio[0] if single else cm_ratio,
        "sup_ratio": float(ratio.max()),
        "sup_cm_ratio": float(cm_ratio.max()),
    }
    if zeta_X_lip is not None:
        excess = ratio / np.exp(-zeta_X_lip * times)
        out["max_excess"] = float(excess.max())
    if K1 is not None:
        out["K1"] = K1
    return out


def ou_exact_sample(pair: OperatorPair, x0, t: float, plan: NoisePlan) -> np.ndarray:
    """Exact draws of the F = 0 process at time ``t`` (shape ``(paths, n)``)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    mean = np.exp(-pair.a * t) * x0
    if t == 0:
        return np.broadcast_to(mean, (plan.paths, pair.n)).copy()
    sd = np.sqrt(pair.ou_variance(t))
    z = plan.with_stream("exact").increments(0, pair.n)
    return mean + sd * z


def export_ensemble(ens: PathEnsemble, directory) -> Path:
    """Write one little-endian float64 column file per mode, a manifest and a CSV summary."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths, nt, n = ens.states.shape
    files = []
    for k in range(n):
        name = f"mode_{k + 1:03d}.bin"
        np.ascontiguousarray(ens.states[:, :, k], dtype="<f8").tofile(d / name)
        files.append(name)
    manifest = {
        "provenance": ens.provenance,
        "grid": {"t_end": ens.grid.t_end, "steps": ens.grid.steps},
        "times": ens.times.tolist(),
        "shape": [paths, nt, n],
        "dtype": "<f8",
        "layout": "per-mode file, row-major (path, time)",
        "files": files,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    rows = ens.summary()
    with open(d / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return d


def load_ensemble(directory) -> PathEnsemble:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    paths, nt, n = manifest["shape"]
    states = np.empty((paths, nt, n))
    for k, name in enumerate(manifest["files"]):
        states[:, :, k] = np.fromfile(d / name, dtype=manifest["dtype"]).reshape(paths, nt)
    grid = TimeGrid(manifest["grid"]["t_end"], manifest["grid"]["steps"])
    return PathEnsemble(states, np.asarray(manifest["times"]), grid, manifest["provenance"])
