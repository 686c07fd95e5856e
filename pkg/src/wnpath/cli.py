"""Command-line front end.

Subcommands
-----------
``propagate -c cfg.json -o out/``
    Evaluate one engine on a list of queries; writes ``propagator.csv`` and
    ``report.json``.
``verify -s SUITE [-c cfg.json] [-o report.json]``
    Run an invariant suite and print a pass/fail JSON report.
``kernels -c cfg.json [-o out.json]``
    Apply a kernel operation to serialized chaos vectors.

Exit codes: 0 success, 1 failed check, 2 invalid config, 3 tolerance
failure, 4 domain violation.  ``WNPATH_THREADS`` caps the BLAS thread
count when set before start-up.
"""

import argparse
import csv
import json
import math
import os
import sys

import jsonschema

__all__ = ["main", "run_propagate", "run_verify", "run_kernels", "SUITES", "ENGINES",
           "ConfigError"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_TOL, EXIT_DOMAIN = 0, 1, 2, 3, 4

ENGINES = ("free", "harmonic", "ks", "ks_harmonic", "ahk", "doss", "circle")


class ConfigError(Exception):
    """Invalid or unreadable configuration."""


# ------------------------------------------------------------------ schemas

_NUM = {"type": "number"}
_COMPLEX = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_POINT = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}

_QUERY = {
    "type": "object",
    "properties": {"x0": _POINT, "x": _POINT, "t0": _NUM, "t": _NUM},
    "required": ["x0", "x", "t"],
    "additionalProperties": False,
}

_COMPONENT = {
    "type": "object",
    "properties": {
        "weight": _COMPLEX,
        "kind": {"enum": ["point", "gauss"]},
        "location": _NUM,
        "sd": {"type": "number", "exclusiveMinimum": 0},
        "profile": {"type": "array", "items": _NUM},
        "kicks": {"type": "array", "items": _NUM, "minItems": 1},
    },
    "required": ["weight"],
    "additionalProperties": False,
}

_ATOM = {
    "type": "object",
    "properties": {"alpha": _POINT, "weight": _COMPLEX},
    "required": ["alpha", "weight"],
    "additionalProperties": False,
}

_DOSS_POT = {
    "type": "object",
    "properties": {
        "name": {"enum": ["zero", "harmonic", "cosine", "polynomial"]},
        "k": _NUM,
        "g": _NUM,
        "coeffs": {"type": "array", "items": _NUM, "minItems": 1},
        "a": _NUM,
        "b": _NUM,
    },
    "required": ["name"],
    "additionalProperties": False,
}

PROPAGATE_SCHEMA = {
    "type": "object",
    "properties": {
        "engine": {"enum": list(ENGINES)},
        "queries": {"type": "array", "items": _QUERY},
        "k": {"type": "number", "exclusiveMinimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "order_cap": {"type": "integer", "minimum": 0, "maximum": 12},
        "components": {"type": "array", "items": _COMPONENT},
        "atoms": {"type": "array", "items": _ATOM},
        "kick_times": {"type": "array", "items": _NUM},
        "potential": _DOSS_POT,
        "z": _COMPLEX,
        "n_paths": {"type": "integer", "minimum": 2},
        "n_steps": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "seed": {"type": "integer", "minimum": 0},
        "coeffs": {
            "type": "array",
            "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3},
            "minItems": 1,
        },
        "circle_queries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"phi0": _NUM, "t": _NUM},
                "required": ["phi0", "t"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["engine"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"engine": {"const": "circle"}}},
         "then": {"required": ["coeffs", "circle_queries"]},
         "else": {"required": ["queries"]}},
        {"if": {"properties": {"engine": {"enum": ["harmonic", "ks_harmonic"]}}},
         "then": {"required": ["k"]}},
        {"if": {"properties": {"engine": {"const": "doss"}}},
         "then": {"required": ["potential"]}},
    ],
}

_QUERY_FIELDS = {"x0": _POINT, "x": _POINT, "t0": _NUM, "t": _NUM}

SUITE_SCHEMAS = {
    "biorthogonality": {
        "density": {"enum": ["gaussian", "quartic"]},
        "mean": _NUM, "sd": {"type": "number", "exclusiveMinimum": 0},
        "n_max": {"type": "integer", "minimum": 0, "maximum": 12},
        "tol": _NUM,
    },
    "ccr": dict(_QUERY_FIELDS, s=_NUM, eps={"type": "array", "items": _NUM, "minItems": 2},
                atoms={"type": "array", "items": _ATOM}, tol=_NUM),
    "ehrenfest": dict(_QUERY_FIELDS, s=_NUM, atoms={"type": "array", "items": _ATOM}, tol=_NUM),
    "schrodinger": dict(_QUERY_FIELDS, components={"type": "array", "items": _COMPONENT},
                        h=_NUM, tol=_NUM, series_tol=_NUM),
    "theta": {"eta_sq": _NUM, "a": _COMPLEX, "z": _COMPLEX, "u": _COMPLEX, "n_max": {"type": "integer"},
              "tol": _NUM},
    "doss": dict(_QUERY_FIELDS, potential=_DOSS_POT, n_paths={"type": "integer", "minimum": 2},
                 n_steps={"type": "integer", "minimum": 2, "multipleOf": 2},
                 seed={"type": "integer", "minimum": 0}, n_sigma=_NUM),
}
SUITES = tuple(SUITE_SCHEMAS)

KERNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "op": {"enum": ["roundtrip", "scale", "shift", "project", "donsker", "wick", "wiener",
                        "sigma_dagger"]},
        "input": {"type": ["object", "string"]},
        "inputs": {"type": "array", "items": {"type": ["object", "string"]}, "minItems": 2,
                   "maxItems": 2},
        "z": _COMPLEX,
        "eta": {"type": "array", "items": _NUM, "minItems": 1},
        "a": _COMPLEX,
        "N": {"type": "integer", "minimum": 0},
        "n_trunc": {"type": "integer", "minimum": 0},
        "basis": {
            "type": "object",
            "properties": {"D": {"type": "integer", "minimum": 1},
                           "weights": {"type": "array", "items": _NUM}},
            "required": ["D"],
            "additionalProperties": False,
        },
    },
    "required": ["op"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"op": {"enum": ["wick", "wiener"]}}},
         "then": {"required": ["inputs"]}},
        {"if": {"properties": {"op": {"enum": ["roundtrip", "scale", "shift", "project",
                                               "sigma_dagger"]}}},
         "then": {"required": ["input"]}},
        {"if": {"properties": {"op": {"enum": ["scale", "sigma_dagger"]}}},
         "then": {"required": ["z"]}},
        {"if": {"properties": {"op": {"enum": ["shift", "project"]}}},
         "then": {"required": ["eta"]}},
        {"if": {"properties": {"op": {"const": "donsker"}}},
         "then": {"required": ["basis", "eta", "a", "N"]}},
    ],
}


# ------------------------------------------------------------------ helpers

def _load(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _validate(doc, schema):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc


def _cplx(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _query(q, k=None):
    from .closedform import PropagatorQuery
    return PropagatorQuery(q["x0"], q["x"], q.get("t0", 0.0), q["t"], k)


def _space_time_measure(comps):
    from .dyson import SpaceTimeComponent, SpaceTimeMeasure
    return SpaceTimeMeasure([
        SpaceTimeComponent(_cplx(c["weight"]), c.get("kind", "point"), c.get("location", 0.0),
                           c.get("sd"), c.get("profile"), c.get("kicks"))
        for c in comps
    ])


def _fourier_measure(atoms, d, kick_times=None):
    from .dyson import FourierMeasure
    if not atoms:
        return FourierMeasure.empty(d)
    alphas = [a["alpha"] if isinstance(a["alpha"], list) else [a["alpha"]] for a in atoms]
    return FourierMeasure(alphas, [_cplx(a["weight"]) for a in atoms], kick_times)


def _doss_potential(p, d=1):
    from .dossmc import AnalyticPotential
    name = p["name"]
    if name == "zero":
        return AnalyticPotential.zero(d)
    if name == "harmonic":
        return AnalyticPotential.harmonic(p.get("k", 1.0), d, b=p.get("b"))
    if name == "cosine":
        return AnalyticPotential.cosine(p.get("g", 0.0), d)
    if d != 1:
        raise ConfigError("polynomial potentials are one-dimensional")
    return AnalyticPotential.polynomial(p.get("coeffs", [0.0]), a=p.get("a"), b=p.get("b"))


def _fmt(v):
    return "%.17g" % v


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- propagate

def _evaluate(cfg, q):
    """Value, error estimate and JSON record for one query."""
    from . import closedform as cf
    from . import dyson
    engine = cfg["engine"]
    tol = cfg.get("tol", 1e-6)
    if engine == "free":
        v = complex(cf.t_free(q))
        return v, 0.0, {"value": [v.real, v.imag]}
    if engine == "harmonic":
        v = complex(cf.t_harmonic(q))
        return v, 0.0, {"value": [v.real, v.imag]}
    if engine in ("ks", "ks_harmonic"):
        v_meas = _space_time_measure(cfg.get("components", []))
        cap = cfg.get("order_cap", dyson.KS_ORDER_CAP)
        if engine == "ks":
            rep = dyson.ks_propagator(q, v_meas, tol=tol, order_cap=cap)
        else:
            rep = dyson.ks_harmonic_propagator(q, v_meas, tol=tol, order_cap=cap)
        return rep.total, rep.error, rep.to_dict()
    if engine == "ahk":
        m = _fourier_measure(cfg.get("atoms", []), q.d, cfg.get("kick_times"))
        rep = dyson.ahk_t_transform(q, m, cfg.get("order_cap", dyson.AHK_ORDER_CAP), tol=tol)
        return rep.total, rep.error, rep.to_dict()
    if engine == "doss":
        from .dossmc import SQRT_I, doss_propagator
        V = _doss_potential(cfg["potential"], q.d)
        z = _cplx(cfg["z"]) if "z" in cfg else SQRT_I
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est = doss_propagator(q, V, z, cfg.get("n_paths", 100_000), cfg.get("n_steps", 256),
                                  cfg.get("seed", 0))
        return est.value, est.stderr, est.to_dict()
    raise ConfigError(f"unknown engine {engine}")  # pragma: no cover


def run_propagate(cfg, out_dir):
    """Run the configured engine and write ``propagator.csv`` and ``report.json``."""
    _validate(cfg, PROPAGATE_SCHEMA)
    rows, records = [], []
    if cfg["engine"] == "circle":
        from .closedform import circle_propagator
        coeffs = [(int(c[0]), complex(c[1], c[2] if len(c) > 2 else 0.0)) for c in cfg["coeffs"]]
        header = ["index", "phi0", "t", "re", "im", "abs", "err"]
        for i, cq in enumerate(cfg["circle_queries"]):
            v = circle_propagator(coeffs, cq["phi0"], cq["t"])
            rows.append([i, cq["phi0"], cq["t"], v.real, v.imag, abs(v), 0.0])
            records.append({"index": i, "value": [v.real, v.imag]})
    else:
        k = cfg.get("k")
        queries = [_query(q, k) for q in cfg["queries"]]
        d = queries[0].d if queries else 1
        if any(q.d != d for q in queries):
            raise ConfigError("all queries must have the same dimension")
        header = (["index"] + [f"x0_{j}" for j in range(d)] + [f"x_{j}" for j in range(d)]
                  + ["t0", "t", "re", "im", "abs", "err"])
        for i, q in enumerate(queries):
            v, err, rec = _evaluate(cfg, q)
            rows.append([i] + [float(c.real) for c in q.x0] + [float(c.real) for c in q.x]
                        + [float(complex(q.t0).real), float(complex(q.t).real),
                           v.real, v.imag, abs(v), err])
            records.append(dict(rec, index=i))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "propagator.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0]] + [_fmt(float(v)) for v in r[1:]])
    _write_json(os.path.join(out_dir, "report.json"), {"engine": cfg["engine"], "results": records})
    return EXIT_OK


# ------------------------------------------------------------------- verify

def _check(name, residual, tol):
    return {"name": name, "residual": float(residual), "tolerance": float(tol),
            "passed": bool(residual < tol)}


def _suite_biorthogonality(cfg):
    from . import appell1d
    name = cfg.get("density", "gaussian")
    mu = (appell1d.GaussianDensity(cfg.get("mean", 0.0), cfg.get("sd", 1.0)) if name == "gaussian"
          else appell1d.QuarticDensity())
    N = cfg.get("n_max", 8)
    tol = cfg.get("tol", 1e-8)
    system = appell1d.appell_p(mu, N)
    out = []
    for n in range(N + 1):
        for m in range(N + 1):
            target = math.factorial(n) if n == m else 0.0
            r = abs(appell1d.biorthogonality(mu, n, m, system) - target)
            out.append(_check(f"<<Q_{n},P_{m}>>", r, tol))
    return out


def _suite_ccr(cfg):
    from .dyson import ahk_t_transform, ccr_check
    q = _query({"x0": cfg.get("x0", 0.3), "x": cfg.get("x", -0.4), "t0": cfg.get("t0", 0.0),
                "t": cfg.get("t", 1.0)})
    m = _fourier_measure(cfg.get("atoms", []), q.d)
    s = cfg.get("s", 0.5 * (float(q.t0) + float(q.t)))
    _, ex = ccr_check(q, m, s, tuple(cfg.get("eps", (0.2, 0.1, 0.05))))
    e_i = ahk_t_transform(q, m).total
    tol = cfg.get("tol", 1e-8 if not cfg.get("atoms") else 1e-4)
    return [_check("|extrapolated + i E(I)|", abs(ex + 1j * e_i), tol)]


def _suite_ehrenfest(cfg):
    from .dyson import ehrenfest_check
    q = _query({"x0": cfg.get("x0", 0.3), "x": cfg.get("x", -0.4), "t0": cfg.get("t0", 0.0),
                "t": cfg.get("t", 1.0)})
    atoms = cfg.get("atoms", [{"alpha": 1.0, "weight": 0.1}, {"alpha": -1.0, "weight": 0.1}])
    m = _fourier_measure(atoms, q.d)
    s = cfg.get("s", 0.5 * (float(q.t0) + float(q.t)))
    r, e_i = ehrenfest_check(q, m, s)
    return [_check("|residual| / |E(I)|", abs(r) / abs(e_i), cfg.get("tol", 1e-4))]


def _suite_schrodinger(cfg):
    from .dyson import ks_schrodinger_residual
    q = _query({"x0": cfg.get("x0", 0.3), "x": cfg.get("x", -0.4), "t0": cfg.get("t0", 0.0),
                "t": cfg.get("t", 1.0)})
    comps = cfg.get("components", [{"weight": 0.2, "kind": "gauss", "location": 0.2, "sd": 0.5}])
    v = _space_time_measure(comps)
    r = ks_schrodinger_residual(q, v, h=cfg.get("h", 0.05), tol=cfg.get("series_tol", 1e-8))
    return [_check("|Schrodinger residual|", abs(r), cfg.get("tol", 1e-5))]


def _suite_theta(cfg):
    from .closedform import donsker_series_direct, donsker_series_s
    args = (cfg.get("eta_sq", 1.0), _cplx(cfg.get("a", 0.3)), _cplx(cfg.get("z", 1.0)),
            _cplx(cfg.get("u", 0.2)))
    a = donsker_series_s(*args)
    b = donsker_series_direct(*args, n_max=cfg.get("n_max", 50))
    return [_check("|theta route - direct sum|", abs(a - b), cfg.get("tol", 1e-12))]


def _suite_doss(cfg):
    import warnings
    from . import closedform as cf
    from .dossmc import doss_propagator
    from .dyson import FourierMeasure, ahk_t_transform
    pot = cfg.get("potential", {"name": "harmonic", "k": 1.0})
    t = cfg.get("t", 0.5)
    qd = {"x0": cfg.get("x0", 0.3), "x": cfg.get("x", -0.4), "t0": cfg.get("t0", 0.0), "t": t}
    q = _query(qd)
    if pot["name"] == "harmonic":
        ref = complex(cf.t_harmonic(_query(qd, pot.get("k", 1.0))))
    elif pot["name"] == "cosine":
        ref = ahk_t_transform(q, FourierMeasure.cosine(pot.get("g", 0.0))).total
    elif pot["name"] == "zero":
        ref = complex(cf.t_free(q))
    else:
        raise ConfigError("the doss suite needs a harmonic, cosine or zero potential")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = doss_propagator(q, _doss_potential(pot), n_paths=cfg.get("n_paths", 100_000),
                              n_steps=cfg.get("n_steps", 256), seed=cfg.get("seed", 0))
    n_sigma = cfg.get("n_sigma", 3.0)
    dev = abs(est.value - ref)
    if est.stderr == 0:
        return [_check("|MC - reference|", dev, 1e-12)]
    return [_check("|MC - reference| / stderr", dev / est.stderr, n_sigma)]


_SUITE_RUNNERS = {
    "biorthogonality": _suite_biorthogonality,
    "ccr": _suite_ccr,
    "ehrenfest": _suite_ehrenfest,
    "schrodinger": _suite_schrodinger,
    "theta": _suite_theta,
    "doss": _suite_doss,
}


def run_verify(suite, cfg, out_path=None):
    """Run a suite; print (or write) the JSON report and return the exit code."""
    if suite not in SUITE_SCHEMAS:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    _validate(cfg, {"type": "object", "properties": SUITE_SCHEMAS[suite],
                    "additionalProperties": False})
    checks = _SUITE_RUNNERS[suite](cfg)
    passed = all(c["passed"] for c in checks)
    doc = {"suite": suite, "passed": passed, "checks": checks}
    if out_path:
        _write_json(out_path, doc)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if passed else EXIT_FAIL


# ------------------------------------------------------------------ kernels

def _chaos(doc):
    from . import fock
    if isinstance(doc, str):
        doc = _load(doc)
    try:
        return fock.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid kernel document: {exc}") from exc


def run_kernels(cfg, out_path=None):
    """Apply a kernel operation and write (or print) the resulting kernel JSON."""
    import numpy as np
    from . import fock
    _validate(cfg, KERNEL_SCHEMA)
    op = cfg["op"]
    if op == "donsker":
        b = cfg["basis"]
        basis = fock.WeightedBasis(b["D"], b.get("weights"))
        res = fock.donsker_kernels(basis, np.asarray(cfg["eta"], dtype=float), _cplx(cfg["a"]), cfg["N"])
    elif op in ("wick", "wiener"):
        phi, psi = (_chaos(d) for d in cfg["inputs"])
        f = fock.wick_product if op == "wick" else fock.wiener_product
        res = f(phi, psi, cfg.get("n_trunc"))
    else:
        phi = _chaos(cfg["input"])
        if op == "roundtrip":
            res = phi
        elif op == "scale":
            res = fock.scale(phi, _cplx(cfg["z"]))
        elif op == "sigma_dagger":
            res = fock.sigma_dagger(phi, _cplx(cfg["z"]), cfg.get("n_trunc"))
        elif op == "shift":
            res = fock.shift(phi, np.asarray(cfg["eta"], dtype=complex))
        else:
            res = fock.project_perp(phi, np.asarray(cfg["eta"], dtype=float))
    doc = fock.to_json(res)
    if out_path:
        _write_json(out_path, doc)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------- main

def _parser():
    p = argparse.ArgumentParser(prog="wnpath", description="White-noise path-integral engines.")
    sub = p.add_subparsers(dest="command", required=True)
    pp = sub.add_parser("propagate", help="evaluate a propagator engine")
    pp.add_argument("-c", "--config", required=True)
    pp.add_argument("-o", "--out", required=True, help="output directory")
    pp.add_argument("--seed", type=int)
    pv = sub.add_parser("verify", help="run an invariant suite")
    pv.add_argument("-s", "--suite", required=True)
    pv.add_argument("-c", "--config")
    pv.add_argument("-o", "--out", help="report path (default: stdout)")
    pv.add_argument("--seed", type=int)
    pk = sub.add_parser("kernels", help="operate on serialized chaos kernels")
    pk.add_argument("-c", "--config", required=True)
    pk.add_argument("-o", "--out", help="output path (default: stdout)")
    return p


def _set_threads():
    n = os.environ.get("WNPATH_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def main(argv=None):
    """Entry point; returns the process exit code."""
    _set_threads()
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    from .errors import ToleranceError
    try:
        cfg = _load(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        if getattr(args, "seed", None) is not None:
            if args.command == "verify" and "seed" not in SUITE_SCHEMAS.get(args.suite, {}):
                raise ConfigError(f"suite {args.suite!r} takes no seed")
            cfg["seed"] = args.seed
        if args.command == "propagate":
            return run_propagate(cfg, args.out)
        if args.command == "verify":
            return run_verify(args.suite, cfg, args.out)
        return run_kernels(cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOL
    except ValueError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
