"""Analysis pipelines behind the command line and the JSON report (schema 1).

Each ``run_*`` function takes a parsed :class:`~iss_smallgain.specfile.SpecModel`
and an :class:`Options` record and returns ``(section, ok)``; ``section`` is a
JSON-ready dict, ``ok`` tells whether every check of the stage passed.
Errors raised inside a stage are turned into entries of the report's
``errors`` array by :func:`build_report`.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .dynamics import (
    NOT_APPLICABLE,
    InputSignal,
    check_estimates,
    fixed_point_oracle,
    gs_network_from_dynamics,
    integrate,
)
from .kfun import GridSpec, Linear, ScalarFn, format_fn
from .lyapunov import SampleSpec, check_decrease, compose_V, gate_function, lyapunov_network
from .network import D_after_gamma, GainNetwork, apply_gamma, condensation
from .omega import OmegaPath, assemble_reducible, block_path, external_margin
from .transform import alpha_from_etas, etas_from_path, sum_to_max
from .verify import (
    VERIFIED,
    SearchSpec,
    decide,
    default_seed,
    find_alpha,
    verify_cycles,
    verify_linear,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ("analyze", "transform", "path", "lyap", "simulate", "report")

_NUM = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "iss-smallgain report",
    "type": "object",
    "required": ["schema", "command", "spec", "status", "exit_code", "seed", "backend", "results", "errors"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "command": {"enum": list(COMMANDS)},
        "spec": {"type": "string"},
        "title": {"type": "string"},
        "status": {"enum": ["pass", "fail", "error"]},
        "exit_code": {"enum": [0, 1, 2]},
        "seed": {"type": "integer"},
        "backend": {"enum": ["cython", "python"]},
        "results": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "analyze": {
                    "type": "object",
                    "required": ["status", "alpha", "cycle_margins", "witness", "ok"],
                    "properties": {
                        "status": {"enum": ["verified", "falsified", "inconclusive"]},
                        "alpha": {"type": ["string", "null"]},
                        "cycle_margins": {"type": "array", "items": {"type": "number"}},
                        "witness": {"type": ["array", "null"], "items": {"type": "number"}},
                        "witness_rechecked": {"type": ["boolean", "null"]},
                        "rho": _NUM,
                        "sum_condition": {"type": ["boolean", "null"]},
                        "attempts": {"type": "array"},
                        "evidence": {"type": "object"},
                        "ok": {"type": "boolean"},
                    },
                },
                "transform": {
                    "type": "object",
                    "required": ["plan", "gains", "cycles_below_id", "alpha", "ok"],
                    "properties": {
                        "plan": {"type": "object"},
                        "gains": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
                        "external": {"type": "array", "items": {"type": "string"}},
                        "cycles_below_id": {"type": "boolean"},
                        "alpha": {"type": "string"},
                        "alpha_domination": {"type": "boolean"},
                        "ok": {"type": "boolean"},
                    },
                },
                "path": {
                    "type": "object",
                    "required": ["method", "sigma", "validation", "phi", "ok"],
                    "properties": {
                        "method": {"type": "string"},
                        "sigma": {"type": "array", "items": {"type": "string"}},
                        "validation": {"type": "object"},
                        "recipe": {"type": ["array", "null"]},
                        "phi": {"type": "string"},
                        "ok": {"type": "boolean"},
                    },
                },
                "lyap": {
                    "type": "object",
                    "required": ["alpha", "sigma", "gate", "decrease", "ok"],
                    "properties": {
                        "alpha": {"type": "string"},
                        "sigma": {"type": "array", "items": {"type": "string"}},
                        "gate": {"type": "string"},
                        "decrease": {"type": "object"},
                        "ok": {"type": "boolean"},
                    },
                },
                "simulate": {
                    "type": "object",
                    "required": ["input", "T", "dt", "x0", "endpoint", "aborted", "estimates", "ok"],
                    "properties": {
                        "input": {"type": "string"},
                        "T": {"type": "number"},
                        "dt": {"type": "number"},
                        "x0": {"type": "array", "items": {"type": "number"}},
                        "endpoint": {"type": "array", "items": {"type": "number"}},
                        "oracle": {"type": ["array", "null"], "items": {"type": "number"}},
                        "aborted": {"type": "boolean"},
                        "diverging": {"type": "boolean"},
                        "csv": {"type": ["string", "null"]},
                        "alpha": {"type": ["string", "null"]},
                        "estimates": {"type": "object"},
                        "ok": {"type": "boolean"},
                    },
                },
            },
        },
        "errors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["stage", "type", "message"],
                "properties": {
                    "stage": {"type": "string"},
                    "type": {"type": "string"},
                    "message": {"type": "string"},
                    "line": {"type": "integer"},
                    "col": {"type": "integer"},
                    "expected": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
}


class StageError(RuntimeError):
    """A stage could not run (missing section, no admissible alpha, ...)."""


@dataclass
class Options:
    alpha: Optional[ScalarFn] = None
    grid: Optional[GridSpec] = None
    u: InputSignal = field(default_factory=lambda: InputSignal("const", 0.0))
    T: Optional[float] = None
    dt: Optional[float] = None
    x0: Optional[tuple] = None
    out: Optional[str] = None
    stem: str = "network"


def _grid(model, opts: Options) -> GridSpec:
    return opts.grid if opts.grid is not None else model.config().grid


def _search(model) -> SearchSpec:
    cfg = model.config()
    return SearchSpec(rays=cfg.rays, seeds=cfg.seeds, iterations=cfg.iterations)


def _certify(net: GainNetwork, model, opts: Options):
    """Certificate for ``net``: the ``--alpha`` override or the configured sweep."""
    grid = _grid(model, opts)
    cfg = model.config()
    if opts.alpha is not None:
        cert = decide(net, opts.alpha, grid, _search(model), cfg.cycle_cap)
        return cert, [{"alpha": format_fn(opts.alpha), "status": cert.status}]
    return find_alpha(net, cfg.alpha, grid, _search(model), cfg.cycle_cap)


def _need_alpha(net: GainNetwork, model, opts: Options, what: str) -> ScalarFn:
    cert, attempts = _certify(net, model, opts)
    if not cert.verified:
        tried = ", ".join(a["alpha"] for a in attempts)
        raise StageError(f"{what}: small-gain condition not verified (tried alpha = {tried})")
    return cert.alpha


def build_path(net: GainNetwork, alpha: ScalarFn, grid: GridSpec) -> OmegaPath:
    """Block path for irreducible networks, cascade assembly otherwise."""
    if condensation(net).irreducible:
        return block_path(net, alpha, grid)
    return assemble_reducible(net, alpha, grid)


# --------------------------------------------------------------------------


def run_analyze(model, opts: Options):
    net = model.network
    cert, attempts = _certify(net, model, opts)
    out = {
        "status": cert.status,
        "alpha": None if cert.alpha is None else format_fn(cert.alpha),
        "cycle_margins": [c["margin"] for c in cert.evidence.get("cycles", [])],
        "witness": None if cert.witness is None else [float(x) for x in cert.witness],
        "witness_rechecked": None,
        "rho": None,
        "sum_condition": None,
        "attempts": attempts,
        "evidence": _jsonable(cert.evidence),
    }
    if cert.witness is not None:
        out["witness_rechecked"] = cert.recheck(net)
    if net.is_linear():
        lin = verify_linear(net)
        out["rho"] = lin.rho
        out["sum_condition"] = lin.sum_condition
    out["ok"] = cert.status == VERIFIED
    return out, out["ok"]


def run_transform(model, opts: Options):
    net = model.network
    grid = _grid(model, opts)
    alpha = _need_alpha(net, model, opts, "transform")
    path = build_path(net, alpha, grid)
    plan = etas_from_path(net, path, grid)
    tnet = sum_to_max(net, plan)
    cyc = verify_cycles(tnet, Linear(1.0), grid, model.config().cycle_cap)
    a_rec = alpha_from_etas(net, plan, grid)
    # recovered alpha: transformed gains dominate D_alpha o Gamma on grid vectors
    rng = np.random.default_rng(default_seed())
    r = grid.values()
    S = r[:, None] * rng.uniform(0.0, 1.0, (len(r), net.n))
    lhs = apply_gamma(tnet, S)
    rhs = D_after_gamma(net, a_rec, S)
    dom = bool(np.all(lhs >= rhs * (1 - 1e-12)))
    out = {
        "plan": plan.to_json(),
        "gains": [[format_fn(g) for g in row] for row in tnet.gamma],
        "external": [format_fn(g) for g in tnet.external],
        "cycles_below_id": cyc.status == VERIFIED,
        "alpha": format_fn(a_rec),
        "alpha_domination": dom,
    }
    out["ok"] = out["cycles_below_id"] and dom
    return out, out["ok"]


def run_path(model, opts: Options):
    net = model.network
    grid = _grid(model, opts)
    alpha = _need_alpha(net, model, opts, "path")
    path = build_path(net, alpha, grid)
    phi = external_margin(net, alpha, path, grid)
    out = {
        "method": path.method,
        "sigma": [format_fn(s) for s in path.sigma],
        "validation": path.validation.to_json(),
        "recipe": path.recipe,
        "phi": format_fn(phi),
        "alpha": format_fn(alpha),
    }
    out["ok"] = bool(path.validation.ok)
    return out, out["ok"]


def run_lyap(model, opts: Options):
    if model.lyapunov is None:
        raise StageError("lyap: the network file has no [lyapunov] sections")
    if model.dynamics is None:
        raise StageError("lyap: the network file has no [dynamics] sections")
    grid = _grid(model, opts)
    lnet = lyapunov_network(model.lyapunov)
    alpha = _need_alpha(lnet, model, opts, "lyap")
    path = build_path(lnet, alpha, grid)
    _, gate = gate_function(lnet, alpha, path, grid)
    V = compose_V(path, model.lyapunov)
    rep = check_decrease(V, model.dynamics, SampleSpec(samples=model.config().samples), gate)
    out = {
        "alpha": format_fn(alpha),
        "sigma": [format_fn(s) for s in path.sigma],
        "gate": format_fn(gate),
        "decrease": rep.to_json(),
    }
    out["ok"] = rep.gated > 0 and rep.pass_rate == 1.0
    return out, out["ok"]


def run_simulate(model, opts: Options):
    spec = model.dynamics
    if spec is None:
        raise StageError("simulate: the network file has no [dynamics] sections")
    cfg = model.config()
    T = opts.T if opts.T is not None else cfg.horizon
    dt = opts.dt if opts.dt is not None else cfg.dt
    x0 = np.ones(spec.n) if opts.x0 is None else np.asarray(opts.x0, dtype=float)
    traj = integrate(spec, x0, opts.u, T, dt)
    csv = None
    if opts.out is not None:
        os.makedirs(opts.out, exist_ok=True)
        csv = os.path.join(opts.out, f"{opts.stem}_trajectory.csv")
        traj.to_csv(csv)
    gs = gs_network_from_dynamics(spec)
    cert, _ = _certify(gs, model, opts)
    oracle = None
    if cert.verified:
        est = check_estimates(traj, gs, cert.alpha)
        if opts.u.kind == "const":
            w = fixed_point_oracle(gs, abs(opts.u.value))
            oracle = None if w is None else [float(v) for v in w]
    else:
        est = check_estimates(traj, gs, cert.alpha if cert.alpha is not None else Linear(0.1))
    out = {
        "input": str(opts.u),
        "T": float(traj.T),
        "dt": dt,
        "x0": [float(v) for v in x0],
        "endpoint": [float(v) for v in traj.x[-1]],
        "oracle": oracle,
        "aborted": bool(traj.aborted),
        "diverging": bool(traj.diverging()),
        "csv": csv,
        "alpha": None if cert.alpha is None else format_fn(cert.alpha),
        "estimates": est.to_json(),
    }
    out["ok"] = est.status != NOT_APPLICABLE and est.passed
    return out, out["ok"]


STAGES = {
    "analyze": run_analyze,
    "transform": run_transform,
    "path": run_path,
    "lyap": run_lyap,
    "simulate": run_simulate,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def error_entry(stage: str, exc: BaseException) -> dict:
    e = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "col"):
        if isinstance(getattr(exc, attr, None), int):
            e[attr] = getattr(exc, attr)
    if getattr(exc, "expected", None):
        e["expected"] = [str(x) for x in exc.expected]
    return e


def build_report(command: str, model, opts: Options, spec_name: str = "") -> dict:
    """Run ``command`` (``report`` runs every stage the network file supports)."""
    if command == "report":
        stages = ["analyze", "transform", "path"]
        if model.lyapunov is not None and model.dynamics is not None:
            stages.append("lyap")
        if model.dynamics is not None:
            stages.append("simulate")
    else:
        stages = [command]
    results, errors = {}, []
    ok = True
    for st in stages:
        try:
            section, passed = STAGES[st](model, opts)
            results[st] = _jsonable(section)
            ok = ok and passed
        except Exception as exc:  # every stage failure is reported, none aborts the run
            log.debug("stage %s failed", st, exc_info=True)
            errors.append(error_entry(st, exc))
            ok = False
    code = 0 if ok else 1
    return {
        "schema": SCHEMA_VERSION,
        "command": command,
        "spec": spec_name,
        "title": model.title,
        "status": "pass" if ok else "fail",
        "exit_code": code,
        "seed": default_seed(),
        "backend": kernels.BACKEND,
        "results": results,
        "errors": errors,
    }


def error_report(command: str, spec_name: str, exc: BaseException, stage: str = "parse") -> dict:
    """Report for a usage or parse error (exit code 2)."""
    return {
        "schema": SCHEMA_VERSION,
        "command": command if command in COMMANDS else "report",
        "spec": spec_name,
        "status": "error",
        "exit_code": 2,
        "seed": default_seed(),
        "backend": kernels.BACKEND,
        "results": {},
        "errors": [error_entry(stage, exc)],
    }
