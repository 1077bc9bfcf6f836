"""Config-driven experiment runner.

    unitflow <command> --config cfg.json --out results/ [--threads k] [--seed s]

Each run writes ``<command>.csv`` (provenance comment block, header, rows), a
``<command>.json`` summary and a ``<command>.log`` sidecar holding the only
timestamps.  Exit codes: 0 success, 2 config error, 3 numeric failure,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import crofton, fields, geometry, minimize, singularity, surgery, volume as vol

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOCONV = 0, 2, 3, 4
COMMANDS = ("volume", "degree", "cone", "crofton", "surgery", "minimize", "pedersen")

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}
SCHEMA = {
    "type": "object",
    "required": ["manifold", "field"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "manifold": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sphere", "torus"]},
                "dim": {"type": "integer", "minimum": 1},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "periods": _vec,
            },
        },
        "field": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["constant", "hopf", "pedersen", "longitude", "twist"]},
                "vector": _vec,
                "basepoint": _vec,
                "wavevector": _vec,
            },
        },
        "params": {"type": "object"},
    },
}

PARAM_SCHEMAS = {
    "volume": {"h": 0.1, "method": "auto", "pole_policy": "exclude"},
    "degree": {"radius": 0.1, "n_theta": 32},
    "cone": {"R": 0.5, "n_theta": 24, "lambdas": None, "tol": None, "radii": [0.25, 0.5, 1.0],
             "h": 0.005},
    "crofton": {"region": {"kind": "annulus", "r_in": 0.5, "r_out": 1.5}, "orders": [0, 1],
                "n_projections": 1000, "h": 0.05, "cellsize": None, "seed": 0},
    "surgery": {"R": 1.0, "h": 0.01, "n_levels": 10, "n_theta": 24, "n_radial": 24,
                "full_radii": [], "full_h": 0.1},
    "minimize": {"shape": [12, 12, 12], "amplitude": 0.2, "seed": 0, "max_iter": 500,
                 "tol": 1e-8, "target": None, "target_rtol": 1e-3},
    "pedersen": {"h": 0.1, "dims": [3], "radii": [1.5], "compare_h": 0.1},
}

_num = {"type": "number"}
PARAM_TYPES = {
    "h": {"type": "number", "exclusiveMinimum": 0},
    "radius": {"type": "number", "exclusiveMinimum": 0},
    "R": {"type": "number", "exclusiveMinimum": 0},
    "n_theta": {"type": "integer", "minimum": 4},
    "n_radial": {"type": "integer", "minimum": 2},
    "n_levels": {"type": "integer", "minimum": 2},
    "n_projections": {"type": "integer", "minimum": 2},
    "max_iter": {"type": "integer", "minimum": 0},
    "seed": {"type": "integer", "minimum": 0},
    "amplitude": {"type": "number", "minimum": 0},
    "method": {"enum": ["auto", "fd", "exact"]},
    "pole_policy": {"enum": ["error", "exclude"]},
    "orders": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    "dims": {"type": "array", "items": {"type": "integer", "minimum": 3}},
    "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
    "full_radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
    "shape": {"type": "array", "items": {"type": "integer", "minimum": 2}},
    "lambdas": {"type": ["array", "null"], "items": {"type": "number", "exclusiveMinimum": 0}},
    "tol": {"type": ["number", "null"]},
    "cellsize": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "target": {"type": ["number", "null"]},
    "region": {"type": "object", "required": ["kind"],
               "properties": {"kind": {"enum": ["annulus", "box"]}, "r_in": _num, "r_out": _num,
                              "lo": _vec, "hi": _vec}},
}


class ConfigError(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def load_config(text: str, command: str) -> dict:
    """Parse, validate and fill defaults; every default becomes explicit in the returned config."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: invalid JSON ({e})") from None
    errs = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        raise ConfigError("; ".join(f"{_path(e)}: {e.message}" for e in errs))
    if cfg.get("command", command) != command:
        raise ConfigError(f"command: config is for {cfg['command']!r}, not {command!r}")
    defaults = PARAM_SCHEMAS[command]
    params = cfg.get("params", {})
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise ConfigError(f"params/{unknown[0]}: unknown parameter for {command}")
    pschema = {"type": "object",
               "properties": {k: PARAM_TYPES[k] for k in defaults if k in PARAM_TYPES}}
    errs = list(jsonschema.Draft7Validator(pschema).iter_errors(params))
    if errs:
        raise ConfigError("; ".join(f"params/{_path(e)}: {e.message}" for e in errs))
    full = copy.deepcopy(cfg)
    full["command"] = command
    full["params"] = {**copy.deepcopy(defaults), **params}
    return full


def build_field(cfg: dict):
    m = fields.manifold_from_descriptor(cfg["manifold"]) if "dim" in cfg["manifold"] or \
        cfg["manifold"]["kind"] == "torus" else None
    if m is None:
        raise ConfigError("manifold/dim: required for spheres")
    fc = cfg["field"]
    kind = fc["kind"]
    try:
        if kind == "constant":
            return fields.constant_field(m, fc.get("vector", [0.0] * (m.dim - 1) + [1.0]))
        if kind == "hopf":
            return fields.hopf_field(m)
        if kind == "pedersen":
            return fields.pedersen_field(m, fc.get("basepoint"), fc.get("vector"))
        if kind == "longitude":
            return fields.longitude_field(m, fc.get("basepoint"), fc.get("vector"))
        if kind == "twist":
            return fields.twist_field(m, fc.get("wavevector", [0.0, 2 * math.pi / m.periods[1]]))
    except geometry.DomainError as e:
        raise ConfigError(f"field: {e}") from None
    raise ConfigError(f"field/kind: unknown field {kind!r}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


class Table:
    """CSV with a leading '#' provenance block."""

    def __init__(self, header):
        self.header = list(header)
        self.rows = []

    def add(self, *row):
        self.rows.append([_fmt(v) for v in row])

    def render(self, cfg, extra=None) -> str:
        buf = io.StringIO()
        buf.write(f"# config_sha256: {config_hash(cfg)}\n")
        buf.write(f"# config: {json.dumps(cfg, sort_keys=True)}\n")
        for k, v in (extra or {}).items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True, default=_fmt)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray):
        return json.dumps(v.tolist())
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v)
    return v


# -- commands ------------------------------------------------------------------------------

def cmd_volume(f, p, ctx):
    h = p["h"]
    r1 = vol.volume(f, h, method=p["method"], pole_policy=p["pole_policy"])
    r2 = vol.volume(f, 2 * h, method=p["method"], pole_policy=p["pole_policy"])
    n = f.manifold.dim
    t = Table(["region", "h", "total", "error_bar"] + [f"term{k}" for k in range(n)])
    t.add(r1.region, h, r1.total, abs(r1.total - r2.total), *r1.terms)
    return {"volume": t}, {"total": r1.total, "error_bar": abs(r1.total - r2.total),
                           "excluded_radius": r1.excluded_radius}


def cmd_degree(f, p, ctx):
    t = Table(["pole", "radius", "n_theta", "degree", "raw", "residual"])
    out = []
    for pole in f.poles:
        s = singularity.slice_map(f, p["radius"], p["n_theta"], center=pole)
        d = singularity.degree(s)
        t.add(pole.tolist(), p["radius"], p["n_theta"], d.degree, d.raw, d.residual)
        out.append({"pole": pole.tolist(), "degree": d.degree})
    return {"degree": t}, {"poles": out}


def _single_pole(f):
    if len(f.poles) != 1:
        raise ConfigError("field: command needs a field with exactly one pole")
    return f.poles[0]


def cmd_cone(f, p, ctx):
    pole = _single_pole(f)
    u = fields.local_graph(f, pole)
    cl = singularity.cone_limit(u, p["R"], p["lambdas"], p["tol"], p["n_theta"])
    td = Table(["step", "lambda", "defect"])
    for j, d in enumerate(cl.defects, start=1):
        td.add(j, cl.lambdas[j] if j < len(cl.lambdas) else "", d)
    tp = Table(["R", "v0_over_R_cone", "v0_over_R_precone"])
    cone = singularity.monotonicity_profile(cl.cone, p["radii"], p["h"])
    pre = singularity.monotonicity_profile(u, p["radii"], p["h"])
    for (R, a), (_, b) in zip(cone, pre):
        tp.add(R, a, b)
    summ = {"converged": cl.converged, "final_defect": cl.defects[-1] if cl.defects else None,
            "tolerance": cl.tolerance}
    if not cl.converged:
        ctx["status"] = EXIT_NOCONV
    return {"cone_defects": td, "cone_profile": tp}, summ


def _region(rc):
    if rc["kind"] == "annulus":
        return crofton.Annulus(rc.get("r_in", 0.5), rc.get("r_out", 1.5))
    return crofton.Box(tuple(rc["lo"]), tuple(rc["hi"]))


def cmd_crofton(f, p, ctx):
    m = f.manifold
    if m.is_sphere:
        pole = f.poles[0] if len(f.poles) else m.radius * np.eye(m.ambient_dim)[0]
        target = fields.local_graph(f, pole)
        region = _region(p["region"])
    else:
        target = f
        region = None if p["region"]["kind"] == "annulus" else _region(p["region"])
    patch = crofton.graph_patch(target, region, p["h"])
    cs = p["cellsize"] or 2 * patch.lipschitz() * p["h"]
    t = Table(["i", "n_projections", "cellsize", "estimate", "stderr", "reference"])
    rows = []
    for i in p["orders"]:
        ref = _crofton_reference(target, region, i)
        e = crofton.crofton_mass_estimate(patch, None, i, p["n_projections"], cs, ctx["seed"] + i,
                                          workers=ctx["threads"], reference=ref)
        t.add(i, e.n_projections, cs, e.estimate, e.stderr, ref)
        rows.append({"i": i, "estimate": e.estimate, "stderr": e.stderr, "reference": ref})
    return {"crofton": t}, {"orders": rows}


def _crofton_reference(target, region, i):
    if isinstance(target, fields.LocalGraph):
        if isinstance(region, crofton.Annulus):
            g = vol.flat_polar_grid(2, region.r_in, region.r_out, 64, 512)
        else:
            g = vol.flat_box_grid(region.lo, region.hi, [128] * len(region.lo))
        return vol.graph_integral(target, g, i)
    return vol.component_mass(target, i, min(target.manifold.periods) / 128)


def cmd_surgery(f, p, ctx):
    pole = _single_pole(f)
    u = fields.local_graph(f, pole)
    sc = surgery.surgery_scan(u, p["R"], p["h"], p["n_levels"], p["n_theta"], p["n_radial"])
    t = Table(["r", "v0_original", "v0_competitor", "gain", "A", "B"])
    for r, c, comp, g in sc.rows():
        t.add(r, c, comp, g, sc.fit_A, sc.fit_B)
    tables = {"surgery": t}
    summ = {"strategy": sc.strategy, "fit_A": sc.fit_A, "fit_B": sc.fit_B,
            "fit_residual": sc.fit_residual, "fence_slope": sc.fence_slope,
            "cone_slope": sc.cone_slope, "r_star": sc.r_star}
    if p["full_radii"]:
        tf = Table(["r", "v_original", "v_competitor", "difference", "error_bar"])
        for r in p["full_radii"]:
            fc = surgery.full_volume_comparison(f, r, p["full_h"])
            tf.add(r, fc.v_original, fc.v_competitor, fc.difference, fc.error_bar)
        tables["surgery_full"] = tf
    return tables, summ


def cmd_minimize(f, p, ctx):
    m = f.manifold
    lat = fields.make_lattice(m, p["shape"])
    g = fields.perturb_field(fields.sample_field(f, lat), p["amplitude"], ctx["seed"])
    target = None if p["target"] is None else (p["target"], p["target_rtol"])
    st = minimize.descend(minimize.DescentState(g), p["max_iter"], p["tol"], target)
    t = Table(["iteration", "volume", "grad_norm"])
    for k, (v, gn) in enumerate(zip(st.history, st.grad_norms)):
        t.add(k, v, gn)
    ctx["files"]["minimize_field.json"] = st.field.to_json()
    if st.status != "converged":
        ctx["status"] = EXIT_NOCONV
    return {"minimize": t}, {"status": st.status, "iterations": st.iteration,
                             "final_volume": st.history[-1]}


def cmd_pedersen(f, p, ctx):
    t = Table(["dim", "h", "v_pedersen", "error_bar", "v_hopf", "ratio"])
    rows = []
    for d in p["dims"]:
        m = geometry.sphere(d)
        pf = fields.pedersen_field(m)
        a = vol.volume(pf, p["h"], method="fd", pole_policy="exclude").total
        b = vol.volume(pf, 2 * p["h"], method="fd", pole_policy="exclude").total
        hopf = 2 ** ((d - 1) // 2) * m.volume()
        t.add(d, p["h"], a, abs(a - b), hopf, a / hopf)
        rows.append({"dim": d, "v_pedersen": a, "v_hopf": hopf})
    tables = {"pedersen": t}
    if 3 in p["dims"] and p["radii"]:
        tc = Table(["r", "v_original", "v_competitor", "difference", "error_bar"])
        pf = fields.pedersen_field(geometry.sphere(3))
        for r in p["radii"]:
            fc = surgery.full_volume_comparison(pf, r, p["compare_h"])
            tc.add(r, fc.v_original, fc.v_competitor, fc.difference, fc.error_bar)
        tables["pedersen_competitor"] = tc
    return tables, {"volumes": rows}


HANDLERS = {"volume": cmd_volume, "degree": cmd_degree, "cone": cmd_cone, "crofton": cmd_crofton,
            "surgery": cmd_surgery, "minimize": cmd_minimize, "pedersen": cmd_pedersen}

NUMERIC_ERRORS = (geometry.DomainError, singularity.ResolutionError, surgery.TopologicalObstruction,
                  surgery.NonContractible, crofton.RasterError, minimize.StallError,
                  FloatingPointError, np.linalg.LinAlgError)


def run(command: str, config_text: str, out: Path, threads: int = 1, seed=None) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    log = out / f"{command}.log"

    def note(msg):
        with log.open("a") as fh:
            fh.write(f"{datetime.datetime.now().isoformat()} {msg}\n")

    note(f"start {command}")
    try:
        cfg = load_config(config_text, command)
        if seed is not None:
            if "seed" in cfg["params"]:
                cfg["params"]["seed"] = int(seed)
            cfg["seed"] = int(seed)
        f = build_field(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        note(f"config error: {e}")
        return EXIT_CONFIG
    ctx = {"status": EXIT_OK, "files": {}, "threads": max(1, threads),
           "seed": int(cfg.get("seed", cfg["params"].get("seed", 0)))}
    try:
        tables, summary = HANDLERS[command](f, cfg["params"], ctx)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        note(f"config error: {e}")
        return EXIT_CONFIG
    except NUMERIC_ERRORS as e:
        diag = {"command": command, "config_sha256": config_hash(cfg), "error": type(e).__name__,
                "message": str(e)}
        (out / f"{command}_diagnostic.json").write_text(json.dumps(diag, sort_keys=True, indent=1))
        print(f"numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        note(f"numeric failure: {e}")
        return EXIT_NUMERIC
    for name, t in tables.items():
        (out / f"{name}.csv").write_text(t.render(cfg))
    for name, text in ctx["files"].items():
        (out / name).write_text(text)
    summary = {"command": command, "config_sha256": config_hash(cfg), "exit": ctx["status"],
               **summary}
    (out / f"{command}.json").write_text(json.dumps(summary, sort_keys=True, indent=1, default=_fmt))
    note(f"done exit={ctx['status']}")
    return ctx["status"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="unitflow", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    a = ap.parse_args(argv)
    if a.seed is not None and not 0 <= a.seed < 2 ** 64:
        print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = a.config.read_text()
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(a.command, text, a.out, a.threads, a.seed)


if __name__ == "__main__":
    sys.exit(main())
