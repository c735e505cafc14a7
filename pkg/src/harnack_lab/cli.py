"""Command-line experiment runner.

``harnack-lab run <config>`` executes every ``[checks.<name>]`` table and
writes ``report.json``, ``summary.csv`` and one plot-data CSV per
convergence check.  Exit codes: 0 no FAIL, 1 FAIL (or INCONCLUSIVE with
``--strict``), 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import CHECK_TYPES, Config, ConfigError, bundled_config, load_config
from .drift import check_dissipativity, check_yosida_rates
from .rng import NoisePlan
from .sde_sim import TimeGrid, coupled_paths, simulate_endpoints, variational_flow
from .semigroup import (Estimate, Setup, endpoint_samples, generator_consistency, ou_cosine_mean,
                        ou_expect)
from .spectral_model import build_pair, dirichlet_spectrum
from .verify import (FAIL, INCONCLUSIVE, PASS, CheckReport, CheckSpec, Sampler, _clean,
                     check_exp_integrability, check_galerkin, check_gradient_estimate,
                     check_harnack_dissipative, check_harnack_lipschitz, check_hypercontractivity,
                     check_log_harnack, check_strong_feller, check_yosida_semigroup, regime_constants)

SUMMARY_FIELDS = ("id", "lhs", "rhs", "factor", "margin", "ci", "verdict")
DEFAULT_M = 100_000


class RunOptions:
    def __init__(self, seed=None, strict=False, proof_sign=False, exponent_scale=1.0, max_paths=None):
        self.seed = seed
        self.strict = strict
        self.proof_sign = proof_sign
        self.exponent_scale = exponent_scale
        self.max_paths = max_paths


# ---------------------------------------------------------------- helpers

def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def _fmt(v) -> str:
    return f"{float(v):g}"


def _vector(values, n, what):
    v = np.zeros(n)
    values = [float(s) for s in values]
    if len(values) > n:
        raise ConfigError(f"{what} has more than {n} coordinates")
    v[:len(values)] = values
    return v


def _cm_direction(setup: Setup, mode: int, size: float):
    n = setup.pair.n
    if not 1 <= mode <= n:
        raise ConfigError(f"h_mode must lie in 1..{n}")
    h = np.zeros(n)
    h[mode - 1] = size * math.sqrt(setup.pair.c[mode - 1])
    return h


class _Context:
    def __init__(self, cfg: Config, name: str, table: dict, opts: RunOptions):
        self.cfg, self.name, self.table, self.opts = cfg, name, table, opts
        self.setup = cfg.setup
        self.n = self.setup.pair.n
        self.seed = table.get("seed", cfg.check_seed(name, opts.seed))
        M = int(table.get("M", DEFAULT_M))
        if opts.max_paths is not None:
            M = min(M, int(opts.max_paths))
        self.M = M
        self.z = float(table.get("z", 3.0))

    def get(self, key, default=None):
        return self.table.get(key, default)

    def require(self, key):
        if key not in self.table:
            raise ConfigError(f"checks.{self.name} needs '{key}'")
        return self.table[key]

    @property
    def phi(self):
        return self.cfg.observables[self.require("observable")]

    @property
    def x(self):
        return _vector(self.get("x", []), self.n, f"checks.{self.name}.x")

    def spec(self, check_id, regime, h, t, p=2.0, exponent_scale=1.0):
        return CheckSpec(check_id, self.setup, regime, self.phi, self.x, h, float(t), float(p), self.M,
                         self.seed, proof_sign=self.opts.proof_sign and regime == "dissipative",
                         exponent_scale=exponent_scale * self.opts.exponent_scale, z=self.z)


def _simple(check_id, kind, lhs, rhs, ok, details, factor=1.0, ci=0.0, plot=None):
    margin = rhs * factor - lhs
    return CheckReport(check_id, kind, float(lhs), float(rhs), float(factor), float(margin), float(ci),
                       PASS if ok else FAIL, _clean(details), plot)


# ---------------------------------------------------------------- check runners

def _run_harnack(ctx: _Context, regime: str):
    fn = check_harnack_lipschitz if regime == "lipschitz" else check_harnack_dissipative
    sampler = Sampler(ctx.setup, ctx.M, ctx.seed)
    ps, ts, hs = _as_list(ctx.get("p", 2.0)), _as_list(ctx.require("t")), _as_list(ctx.get("h_cm", 1.0))
    mode = int(ctx.get("h_mode", 1))
    x = ctx.x
    sampler.prefetch([x] + [x + _cm_direction(ctx.setup, mode, hc) for hc in hs], [float(t) for t in ts])
    scale = float(ctx.get("exponent_scale", 1.0))
    reports = []
    for p in ps:
        for t in ts:
            for hc in hs:
                cid = f"{ctx.name}[p={_fmt(p)},t={_fmt(t)},h={_fmt(hc)}]"
                spec = ctx.spec(cid, regime, _cm_direction(ctx.setup, mode, hc), t, p, scale)
                reports.append(fn(spec, sampler))
    return reports


def run_harnack_lipschitz(ctx):
    return _run_harnack(ctx, "lipschitz")


def run_harnack_dissipative(ctx):
    return _run_harnack(ctx, "dissipative")


def run_log_harnack(ctx):
    regime = ctx.get("regime", "dissipative")
    sampler = Sampler(ctx.setup, ctx.M, ctx.seed)
    mode = int(ctx.get("h_mode", 1))
    scale = float(ctx.get("exponent_scale", 1.0))
    reports = []
    for t in _as_list(ctx.require("t")):
        for hc in _as_list(ctx.get("h_cm", 1.0)):
            cid = f"{ctx.name}[t={_fmt(t)},h={_fmt(hc)}]"
            spec = ctx.spec(cid, regime, _cm_direction(ctx.setup, mode, hc), t, 2.0, scale)
            reports.append(check_log_harnack(spec, sampler))
    return reports


def run_gradient(ctx):
    regime = ctx.get("regime", "lipschitz")
    sampler = Sampler(ctx.setup, ctx.M, ctx.seed)
    reports = []
    for t in _as_list(ctx.require("t")):
        spec = ctx.spec(f"{ctx.name}[t={_fmt(t)}]", regime, np.zeros(ctx.n), t)
        reports.append(check_gradient_estimate(spec, float(ctx.get("fd_step", 1e-2)), sampler))
    return reports


def run_yosida_semigroup(ctx):
    spec = ctx.spec(ctx.name, "dissipative", np.zeros(ctx.n), ctx.require("t"))
    return [check_yosida_semigroup(spec, ctx.require("deltas"))]


def run_galerkin(ctx):
    spec = ctx.spec(ctx.name, "dissipative", np.zeros(ctx.n), ctx.require("t"))
    return [check_galerkin(spec, ctx.require("dims"))]


def run_strong_feller(ctx):
    h = _cm_direction(ctx.setup, int(ctx.get("h_mode", 1)), float(ctx.get("h_cm", 1.0)))
    spec = ctx.spec(ctx.name, ctx.get("regime", "dissipative"), h, ctx.require("t"))
    return [check_strong_feller(spec, ctx.require("radii"))]


def run_hypercontractivity(ctx):
    family = [ctx.cfg.observables[k] for k in ctx.require("observables")]
    a1 = float(ctx.setup.pair.a[0])
    t_n = math.log(3.0) / (2.0 * a1)
    ts = [float(t) for t in ctx.get("t", [])] + [m * t_n for m in ctx.get("t_threshold_multiples", [])]
    if not ts:
        raise ConfigError(f"checks.{ctx.name} needs 't' or 't_threshold_multiples'")
    ts = sorted(set(ts))
    outer, inner = int(ctx.get("outer", 4000)), int(ctx.get("inner", 4000))
    if ctx.opts.max_paths is not None:
        outer, inner = min(outer, ctx.opts.max_paths), min(inner, ctx.opts.max_paths)
    rep = check_hypercontractivity(ctx.setup, ts, family, outer, inner, ctx.seed,
                                   float(ctx.get("burn_in", 5.0)), ctx.z)
    rep.check_id = ctx.name
    return [rep]


def run_exp_integrability(ctx):
    sizes = [int(s) for s in ctx.get("sizes", [1_000, 10_000, 100_000, 1_000_000])]
    rep = check_exp_integrability(ctx.setup.pair, sizes, ctx.seed, int(ctx.get("reps", 15)),
                                  float(ctx.get("rel_tol", 0.05)))
    rep.check_id = ctx.name
    return [rep]


def run_ou_oracle(ctx):
    setup = ctx.setup
    ou = setup.ou_pair()
    if ou is None:
        raise ConfigError(f"checks.{ctx.name}: the OU oracle needs a zero or linear drift")
    phi, x = ctx.phi, ctx.x
    exact_setup = replace(setup, exact=True)
    ts = [float(t) for t in _as_list(ctx.require("t"))]
    X = endpoint_samples(exact_setup, x, ts, ctx.M, ctx.seed)[0]
    reports = []
    for j, t in enumerate(ts):
        est = Estimate.from_samples(phi(X[:, j]), ctx.seed, keep=False)
        if phi.kind == "cosine":
            exact = phi.offset + phi.scale * ou_cosine_mean(ou, x, t, phi.directions[0], phi.phase)
        else:
            exact = ou_expect(ou, phi, x, t)
        err = abs(est.mean - exact)
        reports.append(_simple(f"{ctx.name}[t={_fmt(t)}]", "ou_oracle", err, ctx.z * est.stderr,
                               err <= ctx.z * est.stderr,
                               {"estimate": est.to_json(), "closed_form": exact, "t": t},
                               ci=est.stderr))
    return reports


def _rates(setup):
    out = {}
    for regime, key in (("lipschitz", "zeta_X_lip"), ("dissipative", "zeta_X_diss")):
        try:
            out[key] = getattr(regime_constants(setup, regime), key)
        except Exception:
            out[key] = None
    return out


def run_contraction(ctx):
    setup, n = ctx.setup, ctx.n
    x = _vector(ctx.require("x"), n, f"checks.{ctx.name}.x")
    y = _vector(ctx.get("y", []), n, f"checks.{ctx.name}.y")
    grid = TimeGrid(float(ctx.get("t_end", 1.0)), int(ctx.get("steps", 100)))
    plan = NoisePlan(ctx.seed, int(ctx.get("paths", 8)))
    tol = float(ctx.get("tol", 1e-10))
    rates = _rates(setup)
    res = coupled_paths(setup.pair, setup.drift, x, y, grid, plan, setup.scheme, tol=tol, **rates)
    checks = [k for k in ("norm_ok", "cm_ok") if k in res]
    if rates["zeta_X_lip"] is not None:
        worst = float(np.max(res["norm_ratio"] / res["norm_bound"]))
    else:
        worst = float(np.max(res["cm_ratio"] / res["cm_bound"]))
    ok = all(res[k] for k in checks)
    details = {"rates": rates, **{k: res[k] for k in checks}, "t_end": grid.t_end, "steps": grid.steps}
    if "flow_mismatch" in res:
        details["flow_mismatch"] = res["flow_mismatch"]
        ok = ok and res["flow_mismatch"] <= tol * max(1.0, float(np.max(np.abs(x - y))))
    plot = [{"t": float(t), "norm_ratio": float(r)} for t, r in zip(res["times"], res["norm_ratio"][0])]
    return [_simple(ctx.name, "contraction", worst, 1.0 + tol, ok, details, plot=plot)]


def run_variational(ctx):
    setup, n = ctx.setup, ctx.n
    x = _vector(ctx.get("x", []), n, f"checks.{ctx.name}.x")
    dt = float(ctx.get("dt", 1e-3))
    grid = TimeGrid.with_dt(float(ctx.get("t_end", 2.0)), dt)
    paths = int(ctx.get("paths", 100))
    tol = float(ctx.get("tol", 0.01))
    const = regime_constants(setup, "lipschitz")
    states, _ = simulate_endpoints(setup.pair, setup.drift, x, grid, NoisePlan(ctx.seed, paths),
                                   setup.scheme, chunk=setup.chunk)
    rng = np.random.default_rng(ctx.seed)
    dirs = [np.eye(n)[0]] + [rng.standard_normal(n) for _ in range(int(ctx.get("directions", 1)))]
    excess, sup_cm = 0.0, 0.0
    for y0 in dirs:
        res = variational_flow(setup.pair, setup.drift, states[0], y0, grid, const.zeta_X_lip, const.K1)
        excess = max(excess, res["max_excess"])
        sup_cm = max(sup_cm, res["sup_cm_ratio"])
    ok = excess <= 1.0 + tol and sup_cm <= const.K1 * (1.0 + tol)
    details = {"max_excess": excess, "sup_cm_ratio": sup_cm, "K1": const.K1,
               "zeta_X_lip": const.zeta_X_lip, "paths": paths, "dt": dt}
    return [_simple(ctx.name, "variational", excess, 1.0 + tol, ok, details)]


def run_yosida_rates(ctx):
    drift = ctx.setup.drift
    y = _vector(ctx.require("y"), ctx.n, f"checks.{ctx.name}.y")
    res = check_yosida_rates(drift, y, [float(d) for d in ctx.require("deltas")],
                             probes=int(ctx.get("probes", 10_000)), seed=ctx.seed)
    worst = max(r["lip_max"] / r["lip_bound"] for r in res["rows"])
    return [_simple(ctx.name, "yosida_rates", worst, 1.0, res["passed"], res, plot=res["rows"])]


def run_dissipativity(ctx):
    drift = ctx.setup.drift
    zeta = float(ctx.get("zeta", drift.zeta_F))
    norm = ctx.get("norm", "X")
    if norm not in ("X", "C"):
        raise ConfigError(f"checks.{ctx.name}.norm must be 'X' or 'C'")
    res = check_dissipativity(drift, zeta, trials=int(ctx.get("trials", 10_000)), seed=ctx.seed,
                              pair=ctx.setup.pair if norm == "C" else None)
    return [_simple(ctx.name, "dissipativity", res["max_violation"], 0.0, res["passed"], res)]


def run_generator(ctx):
    res = generator_consistency(ctx.setup, ctx.phi, ctx.x, ctx.require("dts"), float(ctx.get("M0", 1e3)),
                                ctx.seed)
    dev = max(abs(r - 2.0) for r in res["ratios"]) if res["ratios"] else 0.0
    return [_simple(ctx.name, "generator", dev, 0.5, dev <= 0.5, res, plot=res["rows"])]


RUNNERS = {
    "ou_oracle": run_ou_oracle,
    "harnack_lipschitz": run_harnack_lipschitz,
    "harnack_dissipative": run_harnack_dissipative,
    "log_harnack": run_log_harnack,
    "gradient": run_gradient,
    "yosida_semigroup": run_yosida_semigroup,
    "galerkin": run_galerkin,
    "strong_feller": run_strong_feller,
    "hypercontractivity": run_hypercontractivity,
    "exp_integrability": run_exp_integrability,
    "contraction": run_contraction,
    "variational": run_variational,
    "yosida_rates": run_yosida_rates,
    "dissipativity": run_dissipativity,
    "generator": run_generator,
}
assert set(RUNNERS) == set(CHECK_TYPES)


# ---------------------------------------------------------------- run

def run_checks(cfg: Config, opts: RunOptions | None = None) -> list:
    """All reports of ``cfg``, ordered by check id."""
    opts = opts or RunOptions()
    reports = []
    for name, table in cfg.checks.items():
        reports.extend(RUNNERS[table["type"]](_Context(cfg, name, table, opts)))
    return sorted(reports, key=lambda r: r.check_id)


def summary_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in reports:
        row = r.summary_row()
        w.writerow([row["id"]] + [repr(float(row[k])) for k in SUMMARY_FIELDS[1:-1]] + [row["verdict"]])
    return buf.getvalue()


def _plot_name(check_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", check_id).strip("_") + ".csv"


def write_outputs(cfg: Config, reports, out_dir, opts: RunOptions) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {v: sum(r.verdict == v for r in reports) for v in (PASS, FAIL, INCONCLUSIVE)}
    master = cfg.seed if opts.seed is None else opts.seed
    doc = {"name": cfg.name, "version": __version__, "config": cfg.source, "master_seed": master,
           "proof_sign": opts.proof_sign, "exponent_scale": opts.exponent_scale,
           "max_paths": opts.max_paths, "setup": cfg.setup.describe(), "counts": counts,
           "inconclusive_warning": counts[INCONCLUSIVE] > 0,
           "checks": [r.to_json() for r in reports]}
    (out / "report.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=False) + "\n")
    (out / "summary.csv").write_text(summary_csv(reports))
    plots = out / "plots"
    for r in reports:
        rows = getattr(r, "plot", None)
        if not rows:
            continue
        plots.mkdir(exist_ok=True)
        keys = [k for k, v in rows[0].items() if isinstance(v, (int, float, bool, np.floating))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([repr(float(row[k])) if not isinstance(row[k], bool) else int(row[k]) for k in keys])
        (plots / _plot_name(r.check_id)).write_text(buf.getvalue())
    return counts


def exit_code(counts: dict, strict: bool) -> int:
    if counts[FAIL]:
        return 1
    if strict and counts[INCONCLUSIVE]:
        return 1
    return 0


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.suffix == ".toml" or "/" in path:
        return p
    return bundled_config(path)


def cmd_run(args) -> int:
    try:
        cfg = load_config(_resolve(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    opts = RunOptions(args.seed, args.strict, args.proof_sign, args.exponent_scale, args.max_paths)
    try:
        reports = run_checks(cfg, opts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any failure inside a check is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    out_dir = args.out_dir or Path("harnack_out") / cfg.name
    counts = write_outputs(cfg, reports, out_dir, opts)
    for r in reports:
        print(f"{r.verdict:<13} {r.check_id}")
    print(f"{counts[PASS]} PASS, {counts[FAIL]} FAIL, {counts[INCONCLUSIVE]} INCONCLUSIVE -> {out_dir}")
    if counts[INCONCLUSIVE] and not args.strict:
        print("warning: inconclusive verdicts present", file=sys.stderr)
    return exit_code(counts, args.strict)


def cmd_list_checks(args) -> int:
    width = max(map(len, CHECK_TYPES))
    for name, (doc, _keys) in CHECK_TYPES.items():
        print(f"{name:<{width}}  {doc}")
    return 0


def cmd_oracle(args) -> int:
    if args.config:
        try:
            pair = load_config(_resolve(args.config)).setup.pair
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    else:
        pair = build_pair(dirichlet_spectrum(args.n), args.alpha, args.beta)
    k = args.mode
    if not 1 <= k <= pair.n:
        print(f"config error: mode must lie in 1..{pair.n}", file=sys.stderr)
        return 2
    a, c = float(pair.a[k - 1]), float(pair.c[k - 1])
    for t in args.t:
        decay = math.exp(-a * t)
        var = float(pair.ou_variance(t)[k - 1])
        mean = decay * args.x
        row = {"mode": k, "t": t, "a_k": a, "c_k": c, "mean": mean, "variance": var,
               "invariant_variance": c / (2 * a),
               "E_cos": math.exp(-0.5 * args.weight**2 * var) * math.cos(args.weight * mean),
               "weight": args.weight}
        print(json.dumps(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="harnack-lab", description="Monte Carlo checks of Harnack-type bounds")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the checks of a config (path or bundled name)")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--strict", action="store_true", help="treat INCONCLUSIVE as failure")
    r.add_argument("--proof-sign", action="store_true",
                   help="flip the sign of zeta_X in the dissipative factors")
    r.add_argument("--out-dir", default=None)
    r.add_argument("--exponent-scale", type=float, default=1.0,
                   help="multiply every Harnack exponent (0.01 is the sabotage probe)")
    r.add_argument("--max-paths", type=int, default=None, help="cap Monte Carlo sizes for quick runs")
    r.set_defaults(func=cmd_run)

    lc = sub.add_parser("list-checks", help="list the available check types")
    lc.set_defaults(func=cmd_list_checks)

    o = sub.add_parser("oracle", help="closed-form values")
    osub = o.add_subparsers(dest="oracle", required=True)
    ou = osub.add_parser("ou", help="one-mode OU moments and cosine expectation (F = 0)")
    ou.add_argument("--t", type=float, nargs="+", required=True)
    ou.add_argument("--mode", type=int, default=1)
    ou.add_argument("--x", type=float, default=0.0, help="start coordinate along the mode")
    ou.add_argument("--weight", type=float, default=1.0, help="frequency w in E cos(w X_k)")
    ou.add_argument("--n", type=int, default=16)
    ou.add_argument("--alpha", type=float, default=0.5)
    ou.add_argument("--beta", type=float, default=1.0)
    ou.add_argument("--config", default=None, help="take the model from a config instead")
    ou.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
