"""TOML experiment configuration: schema validation and object construction.

Layout::

    [run]          seed, name
    [model]        n, spectrum ("dirichlet" | "explicit:[...]" | list), alpha, beta
    [drift]        kind plus kind-specific parameters, optional yosida_delta
    [simulation]   dt, scheme, exact_ou, chunk
    [observables.<name>]  kind, modes, weights, offset, scale, phase, steep, center, floor
    [checks.<name>]       type plus type-specific parameters

Any key outside the schema raises :class:`ConfigError` naming its dotted path.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .drift import (ComposedDrift, CubicKernelDrift, LinearDrift, ReactionDiffusionDrift,
                    YosidaWrapped, ZeroDrift)
from .semigroup import OBSERVABLE_KINDS, Observable, Setup
from .spectral_model import build_pair, dirichlet_spectrum, explicit_spectrum

__all__ = ["ConfigError", "Config", "load_config", "parse_config", "CHECK_TYPES", "bundled_config"]


class ConfigError(ValueError):
    pass


NUM = (int, float)

SECTIONS = {
    "run": {"seed": int, "name": str},
    "model": {"n": int, "spectrum": (str, list), "alpha": NUM, "beta": NUM},
    "drift": {"kind": str, "zeta": NUM, "L_G": NUM, "mix": bool, "shift": NUM, "kappa": NUM,
              "zeta_F": NUM, "u_profile": str, "u_mode": int, "coeff": NUM, "phi": str,
              "grid_size": int, "yosida_delta": NUM},
    "simulation": {"dt": NUM, "scheme": str, "exact_ou": bool, "chunk": int},
}

OBSERVABLE_KEYS = {"kind": str, "modes": list, "weights": list, "offset": NUM, "scale": NUM,
                   "phase": NUM, "steep": NUM, "center": NUM, "floor": NUM}

_COMMON = {"type": str, "observable": str, "x": list, "M": int, "seed": int, "z": NUM}
_POINT = {"t": (NUM, list), "h_mode": int, "h_cm": (NUM, list), "regime": str}

CHECK_TYPES = {
    "ou_oracle": ("F = 0 estimate of P(t)phi against the Gaussian closed form",
                  {**_COMMON, "t": (NUM, list)}),
    "harnack_lipschitz": ("power Harnack bound with the K1 factor (Lipschitz drift)",
                          {**_COMMON, **_POINT, "p": (NUM, list), "exponent_scale": NUM}),
    "harnack_dissipative": ("power Harnack bound with the exp(2 t zeta_X) factor (dissipative drift)",
                            {**_COMMON, **_POINT, "p": (NUM, list), "exponent_scale": NUM}),
    "log_harnack": ("logarithmic Harnack bound for a positive observable",
                    {**_COMMON, **_POINT, "exponent_scale": NUM}),
    "gradient": ("|D_C P(t)phi|_C against factor * P(t)|D_C phi|_C",
                 {**_COMMON, "t": (NUM, list), "regime": str, "fd_step": NUM}),
    "yosida_semigroup": ("P_delta(t)phi -> P(t)phi as delta shrinks",
                         {**_COMMON, "t": NUM, "deltas": list}),
    "galerkin": ("Cauchy gaps of P_n(t)phi over increasing truncations",
                 {**_COMMON, "t": NUM, "dims": list}),
    "strong_feller": ("P(t)f(x+h) -> P(t)f(x) as |h|_C -> 0, with the optimised envelope",
                      {**_COMMON, "t": NUM, "h_mode": int, "h_cm": NUM, "radii": list, "regime": str}),
    "hypercontractivity": ("|P(t)f|_{L^4(mu)} / |f|_{L^2(mu)} across t",
                           {"type": str, "observables": list, "t": list, "t_threshold_multiples": list,
                            "outer": int, "inner": int, "burn_in": NUM, "seed": int, "z": NUM}),
    "exp_integrability": ("bracketing of the Gaussian exponential-integrability threshold",
                          {"type": str, "sizes": list, "reps": int, "rel_tol": NUM, "seed": int}),
    "contraction": ("synchronously coupled paths against exp(-zeta_X t) / exp(zeta_X t)",
                    {"type": str, "x": list, "y": list, "t_end": NUM, "steps": int, "paths": int,
                     "seed": int, "tol": NUM}),
    "variational": ("derivative flow |DX(t)y| <= exp(-zeta_X t)|y| and |.|_C <= K1",
                    {"type": str, "x": list, "paths": int, "t_end": NUM, "dt": NUM, "tol": NUM,
                     "seed": int, "directions": int}),
    "yosida_rates": ("resolvent distance, Lipschitz and growth bounds of the Yosida approximants",
                     {"type": str, "y": list, "deltas": list, "probes": int, "seed": int}),
    "dissipativity": ("<F(x)-F(y), x-y> <= zeta |x-y|^2 on random pairs (X and H_C norms)",
                      {"type": str, "zeta": NUM, "trials": int, "seed": int, "norm": str}),
    "generator": ("difference quotients of P(dt)phi against the generator",
                  {**_COMMON, "dts": list, "M0": NUM}),
}


def _check_keys(table: dict, allowed: dict, path: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{path} must be a table")
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'")
        typ = allowed[key]
        ok_types = typ if isinstance(typ, tuple) else (typ,)
        flat = []
        for t in ok_types:
            flat.extend(t if isinstance(t, tuple) else (t,))
        if isinstance(value, bool) and bool not in flat:
            raise ConfigError(f"'{path}.{key}' has the wrong type")
        if not isinstance(value, tuple(flat)):
            raise ConfigError(f"'{path}.{key}' has the wrong type (got {type(value).__name__})")


@dataclass
class Config:
    raw: dict
    name: str
    seed: int
    setup: Setup
    observables: dict
    checks: dict = field(default_factory=dict)
    source: str | None = None

    def check_seed(self, check_name: str, master: int | None = None) -> int:
        """Stable per-check seed derived from the master seed and the check name."""
        master = self.seed if master is None else master
        digest = hashlib.sha256(f"{master}:{check_name}".encode()).digest()
        return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def _build_spectrum(model: dict):
    spec = model.get("spectrum", "dirichlet")
    n = model.get("n")
    if isinstance(spec, list):
        values = spec
    elif spec == "dirichlet":
        if n is None:
            raise ConfigError("model.n is required for the dirichlet spectrum")
        return dirichlet_spectrum(n)
    elif isinstance(spec, str) and spec.startswith("explicit:"):
        try:
            values = json.loads(spec[len("explicit:"):])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model.spectrum: cannot parse explicit values ({exc})") from None
    else:
        raise ConfigError(f"model.spectrum: unknown spectrum {spec!r}")
    s = explicit_spectrum(values)
    if n is not None and n != s.n:
        raise ConfigError("model.n disagrees with the explicit spectrum length")
    return s


DRIFT_KEYS = {
    "zero": set(),
    "linear": {"zeta"},
    "composed": {"L_G", "mix", "shift"},
    "cubic": {"kappa", "zeta_F", "u_profile", "u_mode"},
    "reaction_diffusion": {"coeff", "phi", "grid_size"},
}


def build_drift(d: dict, pair):
    kind = d.get("kind", "zero")
    if kind not in DRIFT_KEYS:
        raise ConfigError(f"drift.kind: unknown drift {kind!r}; choose from {sorted(DRIFT_KEYS)}")
    extra = set(d) - DRIFT_KEYS[kind] - {"kind", "yosida_delta"}
    if extra:
        raise ConfigError(f"unknown key 'drift.{sorted(extra)[0]}' for drift kind {kind!r}")
    n = pair.n
    if kind == "zero":
        drift = ZeroDrift(n)
    elif kind == "linear":
        drift = LinearDrift(n, d.get("zeta", 0.0))
    elif kind == "composed":
        drift = ComposedDrift(pair, d.get("L_G", 1.0), d.get("mix", True), d.get("shift", 0.0))
    elif kind == "cubic":
        profile = d.get("u_profile", "mode")
        drift = CubicKernelDrift(n, d.get("kappa", 1.0), d.get("zeta_F", 0.0), profile=profile,
                                 u_mode=d.get("u_mode", 1))
    else:
        drift = ReactionDiffusionDrift(n, d.get("coeff", 1.0), d.get("phi", "cubic"), d.get("grid_size"))
    if "yosida_delta" in d:
        drift = YosidaWrapped(drift, d["yosida_delta"])
    return drift


def build_observable(name: str, table: dict, n: int) -> Observable:
    _check_keys(table, OBSERVABLE_KEYS, f"observables.{name}")
    kind = table.get("kind")
    if kind not in OBSERVABLE_KINDS:
        raise ConfigError(f"observables.{name}.kind: unknown kind {kind!r}")
    params = {k: float(table[k]) for k in ("offset", "scale", "phase", "steep", "center", "floor") if k in table}
    modes = table.get("modes", [1])
    return Observable.on_modes(kind, n, [int(m) for m in modes], table.get("weights"), **params)


def parse_config(raw: dict, source: str | None = None) -> Config:
    allowed_top = set(SECTIONS) | {"observables", "checks"}
    for key in raw:
        if key not in allowed_top:
            raise ConfigError(f"unknown key '{key}'")
    for sec, keys in SECTIONS.items():
        if sec in raw:
            _check_keys(raw[sec], keys, sec)
    model = raw.get("model", {})
    try:
        spectrum = _build_spectrum(model)
        pair = build_pair(spectrum, float(model.get("alpha", 0.0)), float(model.get("beta", 1.0)))
        drift = build_drift(raw.get("drift", {}), pair)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sim = raw.get("simulation", {})
    scheme = sim.get("scheme", "exponential")
    if scheme not in ("exponential", "drift_implicit"):
        raise ConfigError(f"simulation.scheme: unknown scheme {scheme!r}")
    setup = Setup(pair, drift, float(sim.get("dt", 0.01)), scheme, sim.get("exact_ou", True),
                  sim.get("chunk", 25_000))
    observables = {}
    for name, table in raw.get("observables", {}).items():
        try:
            observables[name] = build_observable(name, table, pair.n)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"observables.{name}: {exc}") from None
    checks = {}
    for name, table in raw.get("checks", {}).items():
        if not isinstance(table, dict) or "type" not in table:
            raise ConfigError(f"checks.{name} needs a 'type'")
        ctype = table["type"]
        if ctype not in CHECK_TYPES:
            raise ConfigError(f"checks.{name}.type: unknown check type {ctype!r}")
        _check_keys(table, CHECK_TYPES[ctype][1], f"checks.{name}")
        for ref in [table.get("observable")] + list(table.get("observables", [])):
            if ref is not None and ref not in observables:
                raise ConfigError(f"checks.{name}: unknown observable {ref!r}")
        checks[name] = table
    run = raw.get("run", {})
    return Config(raw, run.get("name", Path(source).stem if source else "run"), run.get("seed", 0),
                  setup, observables, checks, source)


def load_config(path) -> Config:
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    return parse_config(raw, str(p))


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package (``ou_suite`` etc.)."""
    base = Path(__file__).parent / "configs"
    p = base / (name if name.endswith(".toml") else f"{name}.toml")
    if not p.exists():
        raise ConfigError(f"no bundled config {name!r}; available: "
                          f"{sorted(q.stem for q in base.glob('*.toml'))}")
    return p
