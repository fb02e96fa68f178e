"""Command line entry point: ``anisofrac <subcommand> [--config PATH] [--out DIR]``.

Every run reads a strict JSON config (unknown keys are errors), writes a
copy of the resolved config to the output directory, and finishes with a
``summary.json`` whose bytes depend only on the config and seed.

Seeds: instance ``i`` of a run with seed ``S`` uses
``numpy.random.SeedSequence([S, i]).generate_state(1)[0]``.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .abp_envelope import (abp_rectangle_family, concave_envelope, pucci_rhs,
                           volume_consistency, write_contact_mask)
from .aniso_geometry import (RELATION_GROUPS, Anisotropy, Ball, frak_C, fundamental_relations,
                             inclusion_check)
from .dirichlet_solver import assemble, grid_evaluable, maximum_principle_check, solve
from .errors import HypothesisViolation, InsufficientDataError, PreconditionError, RangeError
from .gridfunc import GridFunction, box_grid
from .kernels import KernelSpec, translation_modulus
from .nonlocal_operator import (ETA, EvaluableFunction, b34_points, barrier_eta_L, calibrate_Psi,
                                find_kappa_tau, find_p, operator_values)
from .quadrature import QuadratureScheme
from . import regularity_harness as rh

SUMMARY_FORMAT = "anisofrac.summary/1"
CONFIG_FORMAT = "anisofrac.config/1"
VERIFY_KINDS = ("degiorgi", "growth", "harnack", "pointwise", "liouville", "holder", "c1gamma")

TOP_KEYS = {"anisotropy", "kernel", "grid", "quadrature", "seed", "out", "options"}
GRID_DEFAULTS = {"half_width": 1.0, "N": 32}

OPTION_DEFAULTS = {
    "eval": {"function": "eta", "points": None, "operators": ["L", "plus", "minus"]},
    "barrier": {"points": 50, "R": 4.0, "kappa": 0.5, "psi": True},
    "silvestre": {"delta": None, "grid": 256, "points": 50},
    "abp": {"input": "cap", "rho0": 1.0, "C_grad": 1.0, "C_detach": 1.0, "varsigma": 0.05,
            "max_depth": 8, "lattice": 8, "max_points": 16},
    "solve": {"data": "constant", "value": 1.0, "method": "jacobi", "tol": 1e-10},
    "geometry": {"samples": 65536, "r": 0.7, "l": 0.6},
    "verify": {"instances": 10, "method": "cg", "tol": 1e-10, "input": None, "data": None,
               "delta": None, "mu": 0.0, "tau": None, "R_ladder": [2.0, 4.0, 8.0, 16.0],
               "metric": "aniso", "h": [0.05, 0.1, 0.2]},
}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config


def instance_seed(seed, i):
    return int(np.random.SeedSequence([int(seed), int(i)]).generate_state(1)[0])


def resolve_config(raw, command, seed_override=None, out_override=None):
    """Validate ``raw`` against the schema of ``command`` and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {}
    kern = raw.get("kernel")
    an = raw.get("anisotropy")
    try:
        if kern is not None:
            k = KernelSpec.from_json(kern)
            if an is not None and Anisotropy.from_json(an) != k.a:
                raise ConfigError("anisotropy and kernel disagree")
        else:
            a = Anisotropy.from_json(an if an is not None else {"b": [2, 2], "s": 1.0})
            k = KernelSpec(a)
    except (RangeError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid anisotropy/kernel: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg["anisotropy"] = k.a.to_json()
    cfg["kernel"] = k.to_json()
    grid = dict(GRID_DEFAULTS)
    g = raw.get("grid", {})
    bad = set(g) - set(GRID_DEFAULTS)
    if bad:
        raise ConfigError(f"unknown grid keys: {sorted(bad)}")
    grid.update(g)
    if not (np.all(np.asarray(grid["half_width"], float) > 0) and int(grid["N"]) >= 2):
        raise ConfigError("grid needs half_width > 0 and N >= 2")
    cfg["grid"] = grid
    try:
        cfg["quadrature"] = QuadratureScheme.from_json(raw.get("quadrature", {})).to_json()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    seed = raw.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg["seed"] = seed
    cfg["out"] = out_override or raw.get("out") or f"anisofrac_{command.replace(' ', '_')}"
    base = OPTION_DEFAULTS["verify" if command.startswith("verify") else command]
    opts = dict(copy.deepcopy(base))
    given = raw.get("options", {})
    bad = set(given) - set(base)
    if bad:
        raise ConfigError(f"unknown options for {command}: {sorted(bad)}")
    opts.update(given)
    cfg["options"] = opts
    return cfg


def _kernel(cfg):
    return KernelSpec.from_json(cfg["kernel"])


def _quad(cfg):
    return QuadratureScheme.from_json(cfg["quadrature"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- builtins


def _gaussian():
    return EvaluableFunction(lambda x: np.exp(-np.sum(x * x, axis=-1)), M=1.0, eta0=math.inf,
                             sup_abs=1.0, far_bound=lambda t: math.exp(-t * t), name="gaussian")


def _load_function(spec):
    if spec == "eta":
        return ETA
    if spec == "gaussian":
        return _gaussian()
    if isinstance(spec, str) and os.path.exists(spec):
        return grid_evaluable(GridFunction.read(spec))
    raise ConfigError(f"unknown function {spec!r} (eta, gaussian or an ANLG file)")


def abp_instance(name, a, N=None):
    """Built-in ABP inputs on ``[-3, 3]^n``: ``spike`` (1D) and ``cap``."""
    if name == "spike":
        if a.n != 1:
            raise ConfigError("the spike instance is one-dimensional")
        N = N or 120
        o, h, shp = box_grid(3.0, N, 1)
        x = o[0] + h[0] * np.arange(shp[0])
        v = np.zeros(shp)
        v[np.argmin(np.abs(x))] = 1.0
        v[np.abs(x) >= 1] = -0.1
        return GridFunction(o, h, v, -0.1)
    if name == "cap":
        N = N or 96
        o, h, shp = box_grid(3.0, N, a.n)
        X = GridFunction(o, h, np.zeros(shp)).coords()
        return GridFunction(o, h, np.maximum(1.0 - np.sum(X * X, -1), -1.0), -1.0)
    if os.path.exists(name):
        return GridFunction.read(name)
    raise ConfigError(f"unknown abp input {name!r}")


def _data(kind, n, seed, value=1.0):
    if kind == "constant":
        return float(value)
    if kind == "random":
        return rh.random_exterior(n, seed)
    if kind == "random_nonnegative":
        return rh.random_exterior(n, seed, nonnegative=True)
    raise ConfigError(f"unknown data kind {kind!r}")


# ------------------------------------------------------------- subcommands


def cmd_eval(cfg, out, threads):
    k, q, o = _kernel(cfg), _quad(cfg), cfg["options"]
    u = _load_function(o["function"])
    pts = o["points"] if o["points"] is not None else b34_points(k.a.n, 8).tolist()
    kinds = tuple(o["operators"])
    rows = []
    for x in pts:
        vals = operator_values(u, np.asarray(x, float), k, q, kinds)
        rows.append({"x": list(x), **{kk: vals[kk].to_json() for kk in kinds}})
    with open(os.path.join(out, "operator.csv"), "w") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(k.a.n)]
                          + [f"{kk}{suf}" for kk in kinds for suf in ("", "_err")]) + "\n")
        for r in rows:
            fh.write(",".join([repr(float(v)) for v in r["x"]]
                              + [repr(float(r[kk][f])) for kk in kinds for f in ("value", "error")])
                     + "\n")
    return {"points": rows}, True


def cmd_barrier(cfg, out, threads):
    k, q, o = _kernel(cfg), _quad(cfg), cfg["options"]
    a = k.a
    pts = b34_points(a.n, o["points"])
    vals = [barrier_eta_L(x, k, q) for x in pts]
    eta_sup = max(abs(v.value) + v.error for v in vals)
    cert = find_p(a, o["R"], kappa=o["kappa"], q=q)
    res = {"eta_sup_abs": eta_sup, "power": cert.to_json()}
    ok = bool(math.isfinite(eta_sup) and cert.certified)
    if o["psi"]:
        cal = calibrate_Psi(a, cert.p)
        res["psi"] = cal.to_json()
    return res, ok


def cmd_silvestre(cfg, out, threads):
    k, q, o = _kernel(cfg), _quad(cfg), cfg["options"]
    delta = o["delta"] if o["delta"] is not None else 0.5 * Ball(k.a.n, 1.0).volume()
    res = find_kappa_tau(k.a, delta, grid=o["grid"], q=q, points=o["points"])
    return res.to_json(), bool(res.certified)


def cmd_abp(cfg, out, threads):
    k, o = _kernel(cfg), cfg["options"]
    a = k.a
    u = abp_instance(o["input"], a)
    env = concave_envelope(u)
    pts, f, vals, errs = pucci_rhs(u, k, env, max_points=o["max_points"], q=_quad(cfg))
    fmax = float(np.max(f)) if len(f) else 0.0
    fam = abp_rectangle_family(u, fmax, k, env, rho0=o["rho0"], C_grad=o["C_grad"],
                               C_detach=o["C_detach"], varsigma=o["varsigma"],
                               max_depth=o["max_depth"], lattice=o["lattice"], threads=threads)
    fam.write_json(os.path.join(out, "family.json"))
    write_contact_mask(os.path.join(out, "contact.anlm"), env)
    env.grid.write(os.path.join(out, "envelope.anlg"))
    vol = volume_consistency(u, env, fmax, a, rho0=o["rho0"])
    res = {"envelope": env.to_json(), "f_max": fmax, "family": fam.to_json(),
           "volume": vol.to_json()}
    return res, bool(fam.certified and vol.holds)


def cmd_solve(cfg, out, threads):
    k, o, gr = _kernel(cfg), cfg["options"], cfg["grid"]
    g = _data(o["data"], k.a.n, instance_seed(cfg["seed"], 0), o["value"])
    op = assemble(gr["half_width"], gr["N"], g, k, threads=threads)
    rep = solve(op, tol=o["tol"], method=o["method"], threads=threads)
    sol = rep.solution
    sol.write(os.path.join(out, "solution.anlg"))
    for ax in range(k.a.n):
        sol.write_slice_csv(os.path.join(out, f"slice_x{ax + 1}.csv"), axis=ax)
    res = {"solve": rep.to_json(), "max_principle": bool(maximum_principle_check(op, rep))}
    if o["data"] == "constant":
        res["max_abs_deviation"] = float(np.max(np.abs(sol.values - float(o["value"]))))
    return res, bool(rep.converged)


def cmd_geometry(cfg, out, threads):
    k, o = _kernel(cfg), cfg["options"]
    a = k.a
    fc = frak_C(a)
    rows = []
    ok = True
    for name, A, B in fundamental_relations(a, r=o["r"], l=o["l"], frak_c=fc.value):
        cert = inclusion_check(A, B, samples=o["samples"], seed=cfg["seed"])
        rows.append({"relation": name, **cert.to_json()})
        ok &= cert.holds_on_samples
    return {"frak_C": fc.to_json(), "relations": rows, "groups": list(RELATION_GROUPS)}, bool(ok)


def _solve_instances(cfg, threads, data="random"):
    """Yield ``(index, solution, report, operator)``; the stencil is assembled once."""
    k, o, gr = _kernel(cfg), cfg["options"], cfg["grid"]
    if o["input"] is not None:
        yield 0, GridFunction.read(o["input"]), None, None
        return
    base = assemble(gr["half_width"], gr["N"], 0.0, k, threads=threads)
    for i in range(o["instances"]):
        sd = instance_seed(cfg["seed"], i)
        if data == "halfspace":
            g = rh.halfspace_data(k.a.n, sd)
        elif data == "constant":
            g = 1.0
        elif data in ("random", "nonnegative"):
            g = rh.random_exterior(k.a.n, sd, nonnegative=data == "nonnegative")
        else:
            raise ConfigError(f"unknown data kind {data!r}")
        op = base.with_data(g)
        rep = solve(op, tol=o["tol"], method=o["method"], threads=threads)
        yield i, rep.solution, rep, op


def cmd_verify(kind, cfg, out, threads):
    k, o, gr = _kernel(cfg), cfg["options"], cfg["grid"]
    a = k.a
    reports, ok = [], True

    def emit(rep, i):
        stem = rh.report_stem(kind, a, instance_seed(cfg["seed"], i))
        if hasattr(rep, "write"):
            rep.write(out, stem)
        reports.append({"instance": i, **rep.to_json()})

    if kind == "liouville":
        rep = rh.liouville_probe(k, tuple(o["R_ladder"]), N=gr["N"], method=o["method"], tol=o["tol"])
        emit(rep, 0)
        return {"reports": reports}, bool(rep.passed)
    if kind == "c1gamma":
        mods = [{"h": hh, "C0": translation_modulus(k, [hh] + [0.0] * (a.n - 1)).value}
                for hh in o["h"]]
    data = o["data"] or {"harnack": "nonnegative", "pointwise": "nonnegative",
                         "growth": "halfspace"}.get(kind, "random")
    for i, u, srep, op in _solve_instances(cfg, threads, data):
        if kind == "degiorgi":
            rep = rh.de_giorgi_iteration(u, a)
            ok &= rep.passed
        elif kind == "holder":
            rep = rh.holder_fit(u, a, metric=o["metric"], seed=instance_seed(cfg["seed"], i))
            ok &= rep.passed
        elif kind == "c1gamma":
            rep = rh.gradient_holder_fit(u, a, seed=instance_seed(cfg["seed"], i))
            ok &= rep.passed
        elif kind in ("harnack", "pointwise"):
            C0 = srep.residual if srep is not None else 0.0
            hr = rh.harnack_from_solution(u, C0)
            if kind == "harnack":
                reports.append({"instance": i, **hr.to_json()})
                ok &= math.isfinite(hr.normalized)
                continue
            rep = rh.point_estimate_decay(u, normalize=hr.u_center + hr.C0)
            ok &= rep.passed
        elif kind == "growth":
            delta = o["delta"] if o["delta"] is not None else 0.25 * Ball(a.n, 1.0).volume()
            try:
                ov = rh.grid_operator_values(op, srep) if op is not None else None
                tol = 2.0 * o["tol"] * op.D if op is not None else 1e-9
                res = rh.growth_lemma_check(u, delta, o["mu"], tau=o["tau"], a=a,
                                            operator_values=ov, tol=tol)
                reports.append({"instance": i, **res.to_json()})
                ok &= res.holds
            except HypothesisViolation as exc:
                reports.append({"instance": i, "hypothesis_violation": exc.hypothesis,
                                "detail": exc.detail})
                ok = False
            continue
        emit(rep, i)
    res = {"reports": reports}
    if kind == "c1gamma":
        res["translation_modulus"] = mods
        ok &= all(math.isfinite(m["C0"]) for m in mods)
    return res, bool(ok)


COMMANDS = {"eval": cmd_eval, "barrier": cmd_barrier, "silvestre": cmd_silvestre,
            "abp": cmd_abp, "solve": cmd_solve, "geometry": cmd_geometry}


# -------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="anisofrac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")

    for name in COMMANDS:
        common(sub.add_parser(name))
    v = sub.add_parser("verify")
    v.add_argument("kind", choices=VERIFY_KINDS)
    common(v)
    return p


def run(argv=None):
    """Parse ``argv``, run the subcommand and return ``(exit_code, summary)``."""
    args = build_parser().parse_args(argv)
    command = args.command if args.command != "verify" else f"verify {args.kind}"
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    cfg = resolve_config(raw, command, args.seed, args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be positive")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "config.json"),
               {"format": CONFIG_FORMAT, "command": command, **{k: v for k, v in cfg.items()}})
    if args.command == "verify":
        result, ok = cmd_verify(args.kind, cfg, out, args.threads)
    else:
        result, ok = COMMANDS[args.command](cfg, out, args.threads)
    summary = {"format": SUMMARY_FORMAT, "version": __version__, "command": command,
               "seed": cfg["seed"], "passed": bool(ok), "result": result}
    write_json(os.path.join(out, "summary.json"), summary)
    return (0 if ok else 1), summary


def main(argv=None):
    try:
        code, summary = run(argv)
    except (ConfigError, RangeError, PreconditionError, InsufficientDataError,
            json.JSONDecodeError, OSError) as exc:
        print(f"anisofrac: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": summary["command"], "passed": summary["passed"]}))
    return code


if __name__ == "__main__":
    sys.exit(main())
