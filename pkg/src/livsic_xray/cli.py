"""Batch experiment driver.

Usage::

    python -m livsic_xray list
    python -m livsic_xray run --config exp.cfg [--out DIR] [--seed N]

A config file is flat ``key = value`` text; ``experiment`` names one of
:data:`EXPERIMENTS` and every other key must be one of that experiment's
parameters (see ``list --verbose``).  ``run`` writes ``<name>.json`` (the
report, validated against ``report_schema.json``) and ``<name>.csv`` (raw
measurements) and exits 0 iff every assertion passed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import warnings
from importlib import resources
from math import inf, log, sqrt
from pathlib import Path

import numpy as np

DEFAULT_SEED = 20240917
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one named stream of a run."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


# --- experiments --------------------------------------------------------------------
# Each takes (params, seed) and returns (assertions, summary, columns, rows).


def _check(name, value, threshold, ok):
    return {"name": name, "value": _num(value), "threshold": _num(threshold), "status": "pass" if ok else "fail"}


def _num(v):
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    v = float(v)
    return v if np.isfinite(v) else None


def exp_symtensor(p, seed):
    from .sphere import sphere_volume
    from .symtensor import (
        CotangentDirection,
        EuclideanSpace,
        SymTensor,
        c_nm,
        c_nm_quadrature,
        harmonic_decompose,
        harmonic_recompose,
        multiply_xi,
        pushpull_on_trace_free,
        symbol_sigma_m,
        verify_symbol_projection,
    )

    rows, checks = [], []
    rng = rng_for(seed, 0)
    worst = 0.0
    for n in p["sphere_dims"]:
        E = EuclideanSpace.euclidean(n + 1)
        for m in p["orders"]:
            r = 0.0
            for _ in range(p["n_triples"]):
                xi = CotangentDirection(E, rng.standard_normal(E.d))
                r = max(r, verify_symbol_projection(SymTensor.random(E, m, rng), SymTensor.random(E, m, rng), xi))
            rows.append(["projection_residual", n, m, r])
            worst = max(worst, r)
    checks.append(_check("symbol projection identity", worst, p["tol_projection"], worst < p["tol_projection"]))

    worst = 0.0
    for n in range(1, p["cnm_max"] + 1):
        for m in range(p["cnm_max"] + 1):
            rel = abs(c_nm(n, m) - c_nm_quadrature(n, m)) / c_nm_quadrature(n, m)
            rows.append(["c_nm_relative_error", n, m, rel])
            worst = max(worst, rel)
    checks.append(_check("c_nm closed form vs quadrature", worst, p["tol_cnm"], worst < p["tol_cnm"]))

    off_worst, vol_worst = 0.0, 0.0
    for n in p["sphere_dims"]:
        E = EuclideanSpace.euclidean(n + 1)
        for m in p["orders"]:
            lam, off, _ = pushpull_on_trace_free(E, m)
            rows.append(["pushpull_offdiag", n, m, off])
            off_worst = max(off_worst, off)
            if m <= 1:
                expect = sphere_volume(n + 1) / (n + 1) ** m
                rel = abs(lam - expect) / expect
                rows.append(["pushpull_eigenvalue_relative_error", n, m, rel])
                vol_worst = max(vol_worst, rel)
    checks.append(_check("pushpull scalar on trace-free tensors", off_worst, p["tol_offdiag"], off_worst < p["tol_offdiag"]))
    checks.append(_check("lambda_0 and lambda_1 sphere volumes", vol_worst, p["tol_volume"], vol_worst < p["tol_volume"]))

    worst = 0.0
    E = EuclideanSpace.euclidean(3)
    for m in range(p["harmonic_max"] + 1):
        u = SymTensor.random(E, m, rng)
        r = float(np.abs(harmonic_recompose(harmonic_decompose(u)).coeffs - u.coeffs).max())
        rows.append(["harmonic_roundtrip", 2, m, r])
        worst = max(worst, r)
    checks.append(_check("harmonic decomposition round trip", worst, p["tol_roundtrip"], worst < p["tol_roundtrip"]))

    ann, low = 0.0, inf
    for n in p["sphere_dims"]:
        E = EuclideanSpace.euclidean(n + 1)
        for m in p["orders"]:
            for _ in range(p["n_xi"]):
                v = rng.standard_normal(E.d)
                xi = CotangentDirection(E, v / np.linalg.norm(v))
                S = symbol_sigma_m(xi, m)
                if m >= 1:
                    h = SymTensor.random(E, m - 1, rng)
                    ann = max(ann, float(np.abs(S.apply(multiply_xi(h, xi)).coeffs).max()))
                low = min(low, S.restricted_min_eigenvalue())
            rows.append(["symbol_min_eigenvalue", n, m, low])
    checks.append(_check("symbol annihilates range of xi-multiplication", ann, p["tol_annihilate"], ann < p["tol_annihilate"]))
    checks.append(_check("symbol bounded below on ker i_xi", low, p["min_eigenvalue"], low > p["min_eigenvalue"]))
    summary = {"min_restricted_eigenvalue": low}
    return checks, summary, ["check", "n", "m", "value"], rows


def exp_shadowing(p, seed):
    from .catflow import PseudoOrbit, SuspensionModel, SuspensionState, enumerate_orbits, periodic_points, shadow

    rows, checks = [], []
    model = SuspensionModel(roof_amplitude=p["roof_amplitude"])
    A = np.array(model.A, dtype=object)
    ok = True
    for n in range(1, p["max_period"] + 1):
        An = np.array([[1, 0], [0, 1]], dtype=object)
        for _ in range(n):
            An = An @ A
        det = abs((An[0, 0] - 1) * (An[1, 1] - 1) - An[0, 1] * An[1, 0])
        count = len(periodic_points(model, n)[0])
        rows.append(["fix_count", n, count, det])
        ok &= count == det
    checks.append(_check("#Fix(A^n) = |det(A^n - I)|", p["max_period"], None, ok))

    n = p["orbit_period"]
    orb = [o for o in enumerate_orbits(model, n * model.roof_max() + 0.01) if o.n == n][p["orbit_index"]]
    eps = p["gap"]
    x = np.array(orb.start.base) + eps * model.e_s + eps * model.lam ** (-orb.n) * model.e_u
    pseudo = PseudoOrbit(model, [(SuspensionState.make(model, x), orb.period)], periodic=True)
    res = shadow(pseudo, n_profile=p["n_profile"])
    for ts, ds in res.profiles:
        rows += [["profile", float(t), float(d), None] for t, d in zip(ts, ds)]
    rel = abs(res.theta - log(model.lam)) / log(model.lam)
    checks.append(_check("shadowing distance within 2 x jump bound", res.max_distance, 2 * pseudo.jump_bound,
                         res.max_distance <= 2 * pseudo.jump_bound))
    checks.append(_check("theta fit vs log lambda (relative)", rel, p["tol_theta"], rel < p["tol_theta"]))
    closure = res.orbit.closure_residual()
    checks.append(_check("closed orbit closure residual", closure, p["tol_closure"], closure < p["tol_closure"]))
    summary = {"theta": res.theta, "log_lambda": log(model.lam), "period": res.orbit.period}
    return checks, summary, ["kind", "x", "value", "expected"], rows


def _livsic_fields(model):
    from .catflow import ScalarField

    w = ScalarField.from_base(model, lambda x: np.sin(2 * np.pi * x[:, 0]) + 0.5 * np.cos(2 * np.pi * x[:, 1]), "w")
    g = ScalarField.from_base(model, lambda x: np.cos(2 * np.pi * (x[:, 0] + x[:, 1])), "g")
    return w, g


def exp_livsic_sweep(p, seed):
    from .catflow import SuspensionModel, flow_box_cover
    from .livsic import (
        assemble_coboundary,
        build_dense_separated_orbit,
        coboundary_residual,
        common_holder,
        fit_exponent,
        orbit_data,
    )

    model = SuspensionModel(roof_amplitude=p["roof_amplitude"])
    w, g = _livsic_fields(model)
    cover = flow_box_cover(model)
    deltas = p["deltas"]
    reps = [build_dense_separated_orbit(model, d, measure=False) for d in deltas]
    fs = [w.coboundary() + g.scale(d) for d in deltas]
    beta, K = common_holder(model, [orbit_data(f, r) for f, r in zip(fs, reps)])
    K *= 1.05
    hs, on_orbit, resid = [], [], []
    for k, (f, r) in enumerate(zip(fs, reps)):
        dec = assemble_coboundary(f, r, cover, beta1=beta, K=K, n_check=p["n_check"])
        hs.append(dec.norms["h_sup"])
        on_orbit.append(dec.diagnostics["h_orbit_max"])
        resid.append(coboundary_residual(dec, n=p["n_residual"], dt=1e-5, seed=seed + k, extrapolate=True))
    tau = fit_exponent(np.array(deltas), np.array(hs))
    ratio = max((hs[i + 1] / hs[i] for i in range(len(hs) - 1)), default=0.0)
    checks = [
        _check("h_sup monotone in delta (max consecutive ratio)", ratio, 1.0, ratio <= 1.0),
        _check("log-log slope tau_fit > 0", tau, 0.0, tau > 0),
        _check("h vanishes on the orbit", max(on_orbit), p["tol_orbit"], max(on_orbit) <= p["tol_orbit"]),
        _check("f = Xu + h (extrapolated residual)", max(resid), p["tol_residual"], max(resid) <= p["tol_residual"]),
    ]
    rows = [[d, r.period, h, tau] for d, r, h in zip(deltas, reps, hs)]
    summary = {"beta1": beta, "K": K, "tau_fit": tau, "h_orbit_max": max(on_orbit), "residual_max": max(resid)}
    return checks, summary, ["epsilon", "period", "h_sup", "tau_fit"], rows


def exp_finite_livsic(p, seed):
    from .catflow import SuspensionModel, enumerate_orbits, flow_box_cover
    from .livsic import assemble_coboundary, build_dense_separated_orbit, xray_many

    model = SuspensionModel(roof_amplitude=p["roof_amplitude"])
    w, g = _livsic_fields(model)
    eps = p["epsilon"]
    f = w.coboundary() + g.scale(p["delta"])
    rep = build_dense_separated_orbit(model, eps, measure=False)
    dec = assemble_coboundary(f, rep, flow_box_cover(model), n_check=p["n_check"])
    Lp = p["factor"] * eps**-0.5
    orbits = enumerate_orbits(model, Lp)
    vals = xray_many(f, orbits)
    sup = float(np.abs(vals).max())
    hs = dec.norms["h_sup"]
    rows = [[o.n, o.period, v] for o, v in zip(orbits, vals)]
    checks = [_check("sup |If| <= ||h||_C0 + 1e-8", sup, hs + 1e-8, sup <= hs + 1e-8),
              _check("generating orbit within budget", rep.period, eps**-0.5, rep.period <= eps**-0.5)]
    summary = {"n_orbits": len(orbits), "L_prime": Lp, "h_sup": hs, "sup_If": sup}
    return checks, summary, ["n", "period", "xray"], rows


def exp_xray_kernel(p, seed):
    from .hypflow import BandField, ConstantField, FlowDerivative, FuchsianGroup, enumerate_classes, xray_classes

    G = FuchsianGroup.bolza()
    classes = enumerate_classes(G, p["max_length"], p["word_cutoff"])
    rng = rng_for(seed, 0)
    fields = [FlowDerivative(BandField.random(G, p["band"], rng)) for _ in range(p["n_fields"])]
    vals = xray_classes(fields + [ConstantField(G, 1.0)], classes, per_unit=p["per_unit"])
    kern = np.abs(vals[:-1]).max(axis=0)
    one = float(np.abs(vals[-1] - 1).max())
    rows = [[c.word, c.length, k, v] for c, k, v in zip(classes, kern, vals[-1])]
    checks = [_check("max |I(XW)|", kern.max(), p["tol_kernel"], kern.max() < p["tol_kernel"]),
              _check("|I(1) - 1|", one, p["tol_one"], one < p["tol_one"])]
    summary = {"n_classes": len(classes), "max_kernel": float(kern.max())}
    return checks, summary, ["word", "length", "max_abs_xray_XW", "xray_one"], rows


def exp_variance(p, seed):
    from .hypflow import BandField, ConstantField, FuchsianGroup, pairing_matrix

    G = FuchsianGroup.bolza()
    rng = rng_for(seed, 0)
    fields = [BandField.random(G, p["band"], rng).centered() for _ in range(p["n_fields"])]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, se, tail = pairing_matrix(fields + [ConstantField(G, 1.0)], p["T_max"], p["n_samples"], seed, p["dt"])
        sym = pairing_matrix(fields[:2], p["T_max"], p["n_samples"], seed + 1, p["dt"])
    diag = np.diag(val)[:-1]
    dse = np.diag(se)[:-1]
    pos = bool(np.all(diag >= -3 * dse))
    # pairing(F1, F2) from the first run against pairing(F2, F1) from an independent one
    d12 = abs(val[0, 1] - sym[0][1, 0])
    s12 = 3 * np.hypot(se[0, 1], sym[1][1, 0])
    const = float(max(np.abs(val[-1]).max(), np.abs(val[:, -1]).max()))
    rows = [[i, diag[i], dse[i], tail[i, i]] for i in range(len(diag))]
    checks = [_check("<Pi F, F> >= -3 se (all fields)", float((diag + 3 * dse).min()), 0.0, pos),
              _check("symmetry within 3 se", d12, s12, d12 <= s12),
              _check("centred constant pairs to 0", const, p["tol_constant"], const < p["tol_constant"])]
    summary = {"min_diag": float(diag.min()), "max_tail": float(np.diag(tail)[:-1].max())}
    return checks, summary, ["field", "pairing", "stderr", "tail"], rows


def exp_parry(p, seed):
    from .hypflow import BandField, ConstantField, FuchsianGroup, enumerate_geodesics, parry_average

    G = FuchsianGroup.bolza()
    Ts = p["T_grid"]
    cls = enumerate_geodesics(G, max(Ts), oriented=True)
    one = [parry_average(ConstantField(G, 1.0), T, classes=cls) for T in Ts]
    err = max(abs(v - 1) for v in one)
    rows, ratio = [], 0.0
    for s in p["field_seeds"]:
        F = BandField.random(G, p["band"], np.random.default_rng(s)).centered()
        vals = [parry_average(F, T, classes=cls) for T in Ts]
        rows += [[s, T, v] for T, v in zip(Ts, vals)]
        ratio = max([ratio] + [abs(vals[i + 1]) / abs(vals[i]) for i in range(len(vals) - 1)])
    rows += [["one", T, v] for T, v in zip(Ts, one)]
    checks = [_check("parry_average(1, T) = 1", err, p["tol_one"], err < p["tol_one"]),
              _check("|parry_average(F, T)| non-increasing (max consecutive ratio)", ratio, 1.0, ratio <= 1.0)]
    summary = {"n_geodesics": len(cls)}
    return checks, summary, ["field", "T", "value"], rows


def exp_resolvent(p, seed):
    from .hypflow import resolvent_on_orbit

    rng = rng_for(seed, 0)
    rows = []
    worst, bound_ok, one_err = 0.0, True, 0.0
    for k in range(p["n_signals"]):
        ell = rng.uniform(2.0, 8.0)
        t = np.arange(p["n_samples"]) * ell / p["n_samples"]
        modes = rng.normal(size=(p["n_modes"] + 1, 2))
        f = sum(a * np.cos(2 * np.pi * j * t / ell) + b * np.sin(2 * np.pi * j * t / ell) for j, (a, b) in enumerate(modes))
        for lam in p["lambdas"]:
            value, c, direct = resolvent_on_orbit(f, ell, lam)
            gap = abs(value - direct)
            worst = max(worst, gap)
            bound_ok &= value >= abs(c[0]) ** 2 / lam
            rows.append([k, ell, lam, value, direct])
    for lam in p["lambdas"]:
        v, _, _ = resolvent_on_orbit(np.ones(p["n_samples"]), 3.0, lam, direct=False)
        one_err = max(one_err, abs(v - 1 / lam) * lam)
    checks = [_check("multiplier vs direct quadrature", worst, p["tol_direct"], worst < p["tol_direct"]),
              _check("lower bound |c0|^2 / lambda", None, None, bound_ok),
              _check("constant signal gives 1/lambda (relative)", one_err, 1e-14, one_err <= 1e-14)]
    return checks, {"max_gap": worst}, ["signal", "length", "lambda", "multiplier", "direct"], rows


EXPERIMENTS = {
    "symtensor-identities": (exp_symtensor, {
        "sphere_dims": ([1, 2, 3], _ints), "orders": ([0, 1, 2, 3], _ints), "n_triples": (50, int),
        "cnm_max": (4, int), "harmonic_max": (4, int), "n_xi": (100, int),
        "tol_projection": (1e-8, float), "tol_cnm": (1e-10, float), "tol_offdiag": (1e-8, float),
        "tol_volume": (1e-8, float), "tol_roundtrip": (1e-10, float), "tol_annihilate": (1e-9, float),
        "min_eigenvalue": (1e-3, float)}),
    "shadowing-profile": (exp_shadowing, {
        "roof_amplitude": (0.0, float), "max_period": (12, int), "orbit_period": (11, int),
        "orbit_index": (3, int), "gap": (1e-3, float), "n_profile": (200, int),
        "tol_theta": (0.2, float), "tol_closure": (1e-9, float)}),
    "livsic-sweep": (exp_livsic_sweep, {
        "roof_amplitude": (0.1, float), "deltas": ([1e-1, 1e-2, 1e-3, 1e-4], _floats), "n_check": (4000, int),
        "n_residual": (300, int), "tol_orbit": (1e-8, float), "tol_residual": (1e-6, float)}),
    "finite-livsic": (exp_finite_livsic, {
        "roof_amplitude": (0.1, float), "epsilon": (0.1, float), "delta": (0.1, float), "factor": (3.0, float),
        "n_check": (200, int)}),
    "xray-kernel": (exp_xray_kernel, {
        "word_cutoff": (6, int), "max_length": (inf, float), "n_fields": (5, int), "band": (2, int),
        "per_unit": (64, int), "tol_kernel": (1e-6, float), "tol_one": (1e-12, float)}),
    "variance-positivity": (exp_variance, {
        "n_fields": (20, int), "band": (2, int), "T_max": (30.0, float), "n_samples": (1000, int),
        "dt": (0.05, float), "tol_constant": (1e-12, float)}),
    "parry": (exp_parry, {
        "T_grid": ([6.0, 8.0, 10.0], _floats), "field_seeds": ([300, 301, 302], _ints), "band": (2, int),
        "tol_one": (1e-12, float)}),
    "resolvent": (exp_resolvent, {
        "n_signals": (10, int), "lambdas": ([0.1, 0.5, 1.0, 2.0], _floats), "n_samples": (64, int),
        "n_modes": (6, int), "tol_direct": (1e-6, float)}),
}


# --- config -------------------------------------------------------------------------


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, "given twice")
        out[key] = value
    return out


def resolve_config(raw: dict, seed: int | None = None) -> dict:
    """Typed parameters for the named experiment, defaults filled in."""
    if "experiment" not in raw:
        raise ConfigError("experiment", "missing")
    name = raw["experiment"]
    if name not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {name!r}")
    _, spec = EXPERIMENTS[name]
    params = {k: v for k, (v, _) in spec.items()}
    for key, value in raw.items():
        if key in ("experiment", "seed", "out"):
            continue
        if key not in spec:
            raise ConfigError(key, f"not a parameter of {name}")
        try:
            params[key] = spec[key][1](value)
        except ValueError as err:
            raise ConfigError(key, f"cannot parse {value!r} ({err})") from None
    for key, value in params.items():
        vals = value if isinstance(value, list) else [value]
        if key.startswith("tol_") and not all(v > 0 for v in vals):
            raise ConfigError(key, "tolerances must be > 0")
    if seed is None:
        try:
            seed = int(raw.get("seed", DEFAULT_SEED))
        except ValueError:
            raise ConfigError("seed", "not an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    return {"experiment": name, "seed": seed, "params": params, "out": raw.get("out")}


def load_schema() -> dict:
    return json.loads(resources.files("livsic_xray").joinpath("report_schema.json").read_text())


def run_experiment(cfg: dict) -> tuple[dict, str]:
    """Run and return ``(report, csv text)``; the report has no timing data."""
    import jsonschema

    fn, _ = EXPERIMENTS[cfg["experiment"]]
    checks, summary, columns, rows = fn(cfg["params"], cfg["seed"])
    report = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "seed": cfg["seed"],
        "params": {k: (_num(v) if isinstance(v, float) else v) for k, v in cfg["params"].items()},
        "assertions": checks,
        "summary": {k: _num(v) for k, v in summary.items()},
        "csv_columns": columns,
        "status": "pass" if all(c["status"] == "pass" for c in checks) else "fail",
    }
    jsonschema.validate(report, load_schema())
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in r])
    return report, buf.getvalue()


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def cmd_list(args):
    for name, (fn, spec) in EXPERIMENTS.items():
        print(name)
        if args.verbose:
            for key, (default, _) in spec.items():
                print(f"    {key} = {default}")
    return 0


def cmd_run(args):
    try:
        raw = parse_config(Path(args.config).read_text())
        cfg = resolve_config(raw, args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg["out"] or ".")
    if not out.is_dir():
        print(f"output directory {out} does not exist", file=sys.stderr)
        return 3
    t0 = time.perf_counter()
    report, table = run_experiment(cfg)
    name = cfg["experiment"]
    (out / f"{name}.json").write_text(dump_report(report))
    (out / f"{name}.csv").write_text(table)
    for c in report["assertions"]:
        print(f"[{c['status'].upper()}] {c['name']}: value={c['value']} threshold={c['threshold']}")
    print(f"{name}: {report['status']} in {time.perf_counter() - t0:.1f} s -> {out}/{name}.json")
    return 0 if report["status"] == "pass" else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="livsic-xray", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--out", help="output directory (default: config 'out' or cwd)")
    run.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
    lst = sub.add_parser("list", help="print experiment names")
    lst.add_argument("--verbose", "-v", action="store_true", help="also print parameters and defaults")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "list": cmd_list}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
