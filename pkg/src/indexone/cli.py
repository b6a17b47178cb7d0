"""Command-line runner: ``indexone {run,converge,check,list}``."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import re
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .core import PhaseState
from .diagnostics import (
    constraint_audit,
    energy_report,
    estimate_order,
    symplecticity_report,
)
from .errors import ConfigError, IndexOneError, StepFailureError
from .integrators import (
    ButcherTableau,
    SolverConfig,
    Trajectory,
    integrate,
    step_count,
    symplecticity_residual,
    tableau_by_name,
)
from .problems import PROBLEMS, build_named_system, named_state

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_STEP = 3
EXIT_IO = 4
EXIT_OTHER = 5

DEFAULT_TOLERANCES = {
    "tableau": 1e-15,
    "defect": 1e-6,
    "residual": 1e-11,
    "holonomic": 1e-12,
    "hidden": 1e-10,
}

PRESETS = {
    "heisenberg-demo": {
        "experiment": "heisenberg-demo",
        "problem": "heisenberg",
        "state": "demo",
        "tableau": "midpoint",
        "dt": 0.01,
        "t_end": 5.0,
        "symplecticity": True,
        "symplecticity_steps": 10,
    },
    "heisenberg-converge-midpoint": {
        "experiment": "heisenberg-converge-midpoint",
        "problem": "heisenberg",
        "state": "demo",
        "tableau": "midpoint",
        "dt": 0.01,
        "t_end": 1.0,
        "convergence_dts": [0.08, 0.04, 0.02, 0.01],
        "reference_dt": 5e-4,
    },
    "heisenberg-converge-gauss2": {
        "experiment": "heisenberg-converge-gauss2",
        "problem": "heisenberg",
        "state": "demo",
        "tableau": "gauss2",
        "dt": 0.01,
        "t_end": 1.0,
        "convergence_dts": [0.08, 0.04, 0.02, 0.01],
        "reference_dt": 5e-4,
    },
    "vehicle-energy": {
        "experiment": "vehicle-energy",
        "problem": "vehicle",
        "params": {"L": 0.3, "alpha": 1.0, "beta": 1.0, "potential": "cosine-bowl"},
        "state": "bowl",
        "tableau": "midpoint",
        "dt": 0.1,
        "t_end": 1000.0,
        "energy": True,
        "symplecticity": False,
    },
    "vehicle-straight": {
        "experiment": "vehicle-straight",
        "problem": "vehicle",
        "params": {"L": 0.3, "potential": "zero"},
        "state": "straight",
        "tableau": "midpoint",
        "dt": 0.1,
        "t_end": 10.0,
    },
    "vehicle-circle": {
        "experiment": "vehicle-circle",
        "problem": "vehicle",
        "params": {"L": 0.3, "alpha": 1.0, "beta": 1.0, "potential": "zero", "a": 1.0},
        "state": "circular",
        "tableau": "midpoint",
        "dt": 0.05,
        "t_end": 19.0,
    },
    "vehicle-check": {
        "experiment": "vehicle-check",
        "problem": "vehicle",
        "params": {"L": 0.3, "potential": "cosine-bowl"},
        "state": "bowl",
        "tableau": "midpoint",
        "dt": 0.05,
        "t_end": 0.5,
        "symplecticity": True,
        "symplecticity_steps": 10,
    },
    "rattle-circle": {
        "experiment": "rattle-circle",
        "problem": "particle-on-circle",
        "params": {"gravity": 1.0},
        "state": "rotation",
        "tableau": "rattle-midpoint",
        "dt": 0.05,
        "t_end": 10.0,
        "symplecticity": True,
        "symplecticity_steps": 10,
    },
}

PRESET_NOTES = {
    "heisenberg-demo": "Heisenberg particle from q=0, qdot=(0.1,0.3,0), lam=1 (p_z=-1)",
    "heisenberg-converge-midpoint": "order study of the midpoint rule on the Heisenberg problem",
    "heisenberg-converge-gauss2": "order study of Gauss s=2 on the Heisenberg problem",
    "vehicle-energy": "vehicle in the -cos r bowl, 10^4 steps, energy error series",
    "vehicle-straight": "straight-line relative equilibrium of the free vehicle",
    "vehicle-circle": "circular relative equilibrium, p_theta=1.09, p_phi=1, three revolutions",
    "vehicle-check": "symplecticity and constraint checks on the vehicle, 10 steps",
    "rattle-circle": "RATTLE on a particle constrained to the unit circle under gravity",
}


# ---------------------------------------------------------------- config


def _schema(name: str) -> dict:
    text = resources.files("indexone").joinpath("schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def _field_line(text: Optional[str], field: Optional[str]) -> Optional[int]:
    if not text or not field:
        return None
    key = field.split(".")[-1].split("[")[0]
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def validate_config(cfg: dict, text: Optional[str] = None) -> dict:
    """Check ``cfg`` against the config schema and the registries.

    Raises ``ConfigError`` naming the offending field (and its line when
    the source text is known).
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(_schema("config"))
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if err is not None:
        path = ".".join(str(x) for x in err.absolute_path)
        field = path or None
        if err.validator == "required":
            m = re.search(r"'([^']+)' is a required property", err.message)
            field = ".".join(filter(None, [path, m.group(1) if m else None]))
        elif err.validator == "additionalProperties":
            m = re.search(r"\('([^']+)'", err.message)
            if m:
                field = ".".join(filter(None, [path, m.group(1)]))
        raise ConfigError(f"invalid config field {field!r}: {err.message}", field=field, line=_field_line(text, field))
    if isinstance(cfg["state"], str):
        try:
            named_state(cfg["problem"], cfg["state"], cfg.get("params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), field="state", line=_field_line(text, "state")) from None
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return validate_config(cfg, text)


def resolve_config(args) -> dict:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; see 'indexone list'", field="preset")
        cfg = copy.deepcopy(PRESETS[args.preset])
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("either --config or --preset is required")
    if args.dt is not None:
        cfg["dt"] = args.dt
    if args.t_end is not None:
        cfg["t_end"] = args.t_end
    if args.tableau is not None:
        cfg["tableau"] = args.tableau
        cfg.pop("butcher", None)
    return validate_config(cfg)


def experiment_name(cfg: dict) -> str:
    return cfg.get("experiment") or f"{cfg['problem']}-{cfg['state'] if isinstance(cfg['state'], str) else 'custom'}"


def tableau_from_config(cfg: dict) -> ButcherTableau:
    if "butcher" in cfg:
        b = cfg["butcher"]
        try:
            return ButcherTableau(b["A"], b["b"], b["c"], name=b.get("name", "custom"))
        except ValueError as exc:
            raise ConfigError(str(exc), field="butcher") from None
    name = cfg.get("tableau", "midpoint")
    return tableau_by_name("midpoint" if name == "rattle-midpoint" else name)


def tableau_label(cfg: dict) -> str:
    if "butcher" in cfg:
        return cfg["butcher"].get("name", "custom")
    return cfg.get("tableau", "midpoint")


def solver_config(cfg: dict, dt: Optional[float] = None) -> SolverConfig:
    kw = {}
    for key in ("newton_tol", "newton_max_iter", "jacobian_mode"):
        if key in cfg:
            kw[key] = cfg[key]
    return SolverConfig(dt if dt is not None else cfg["dt"], **kw)


def build_experiment(cfg: dict):
    """System and initial state for a validated config."""
    params = cfg.get("params")
    try:
        system = build_named_system(cfg["problem"], params)
    except TypeError as exc:
        raise ConfigError(f"bad problem parameters: {exc}", field="params") from None
    except ValueError as exc:
        raise ConfigError(str(exc), field="params") from None
    state = cfg["state"]
    if isinstance(state, str):
        z0 = named_state(cfg["problem"], state, params).state
    else:
        d = system.dims
        lam = state.get("lam", [0.0] * d.k)
        lam_h = state.get("lam_h", [0.0] * d.l)
        try:
            z0 = PhaseState(state["q"], state["p"], lam, lam_h)
            z0.check_dims(d)
        except ValueError as exc:
            raise ConfigError(str(exc), field="state") from None
    tab = tableau_from_config(cfg)
    if cfg.get("tableau") == "rattle-midpoint" and not system.dims.l:
        raise ConfigError("rattle-midpoint needs a problem with holonomic constraints", field="tableau")
    if system.dims.l and tab.name != "midpoint":
        raise ConfigError("holonomic problems run RATTLE with the midpoint inner step only", field="tableau")
    return system, z0, tab


# ---------------------------------------------------------------- output


def csv_header(system) -> list:
    d = system.dims
    names = list(getattr(getattr(system, "problem", None), "coordinate_names", None) or [f"q{i + 1}" for i in range(d.n)])
    cols = ["t"] + names + [f"p_{n}" for n in names]
    cols += ["lambda"] if d.k == 1 else [f"lambda_{i + 1}" for i in range(d.k)]
    cols += ["lambda_h"] if d.l == 1 else [f"lambda_h_{i + 1}" for i in range(d.l)]
    return cols + ["H", "res_g_max", "newton_iters"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path: Path, system, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(system))
        for i in range(len(traj)):
            row = [_fmt(traj.times[i])] + [_fmt(v) for v in traj.states[i]]
            row += [_fmt(traj.energy[i]), _fmt(traj.endpoint_residual[i]), str(int(traj.newton_iters[i]))]
            w.writerow(row)


def write_json(path: Path, doc: dict, schema: Optional[str] = None) -> None:
    if schema:
        jsonschema.validate(doc, _schema(schema))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def error_record(exc: BaseException) -> dict:
    return {
        "status": "error",
        "kind": type(exc).__name__,
        "message": str(exc),
        "field": getattr(exc, "field", None),
        "line": getattr(exc, "line", None),
        "step": getattr(exc, "step", None),
        "component": getattr(exc, "component", None),
    }


# ---------------------------------------------------------------- commands


def _convergence_section(cfg, system, z0, tab) -> dict:
    ref = solver_config(cfg, cfg["reference_dt"]) if "reference_dt" in cfg else None
    report = estimate_order(system, z0, cfg["t_end"], tab, cfg["convergence_dts"], reference=ref, newton_tol=cfg.get("newton_tol", 1e-12))
    return report.to_dict()


def run_experiment(cfg: dict, out: Path) -> dict:
    """Integrate, write the trajectory CSV and diagnostics JSON, return the diagnostics."""
    system, z0, tab = build_experiment(cfg)
    name = experiment_name(cfg)
    traj = integrate(system, z0, cfg["t_end"], tab, solver_config(cfg))
    doc = {
        "experiment": name,
        "problem": cfg["problem"],
        "tableau": tableau_label(cfg),
        "dt": cfg["dt"],
        "t_end": cfg["t_end"],
        "n_steps": len(traj) - 1,
    }
    if cfg.get("energy", True):
        doc["energy"] = energy_report(system, traj).to_dict(include_series=True)
    doc["constraints"] = constraint_audit(system, traj).to_dict()
    if cfg.get("symplecticity", False):
        n = cfg.get("symplecticity_steps", 10)
        doc["symplecticity"] = symplecticity_report(system, z0, tab, solver_config(cfg), n).to_dict()
    if "convergence_dts" in cfg:
        doc["convergence"] = _convergence_section(cfg, system, z0, tab)
    if traj.warnings:
        doc["warnings"] = list(traj.warnings)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / cfg.get("trajectory_csv", f"{name}.csv"), system, traj)
    write_json(out / cfg.get("diagnostics_json", f"{name}.json"), doc, "diagnostics")
    return doc


def converge_experiment(cfg: dict, out: Path) -> dict:
    if "convergence_dts" not in cfg:
        raise ConfigError("converge needs 'convergence_dts' with at least 3 step sizes", field="convergence_dts")
    system, z0, tab = build_experiment(cfg)
    name = experiment_name(cfg)
    doc = {
        "experiment": name,
        "problem": cfg["problem"],
        "tableau": tableau_label(cfg),
        "t_end": cfg["t_end"],
        "convergence": _convergence_section(cfg, system, z0, tab),
    }
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / f"{name}-convergence.json", doc, "convergence")
    return doc


def _check(name, value, threshold, note=None):
    ok = value is not None and math.isfinite(value) and value <= threshold
    entry = {"name": name, "value": value, "threshold": threshold, "pass": bool(ok)}
    if note:
        entry["note"] = note
    return entry


def check_experiment(cfg: dict, out: Path) -> dict:
    """Tableau residual, flow-map defect and constraint audit with pass/fail verdicts."""
    tol = {**DEFAULT_TOLERANCES, **cfg.get("tolerances", {})}
    system, z0, tab = build_experiment(cfg)
    name = experiment_name(cfg)
    checks = [_check("tableau_symplecticity_residual", symplecticity_residual(tab), tol["tableau"])]
    conf = solver_config(cfg)
    n_sym = cfg.get("symplecticity_steps", step_count(cfg["t_end"], cfg["dt"]))
    try:
        rep = symplecticity_report(system, z0, tab, conf, n_sym)
        checks.append(_check("flow_map_defect", rep.defect, tol["defect"], f"{n_sym} steps"))
    except IndexOneError as exc:
        checks.append(_check("flow_map_defect", None, tol["defect"], str(exc)))
    try:
        traj = integrate(system, z0, cfg["t_end"], tab, conf)
        audit = constraint_audit(system, traj)
        if system.dims.k:
            checks.append(_check("endpoint_residual", audit.endpoint_max, tol["residual"]))
            checks.append(_check("stage_residual", audit.stage_max, tol["residual"]))
        if system.dims.l:
            checks.append(_check("holonomic_residual", audit.holonomic_max, tol["holonomic"]))
            checks.append(_check("hidden_constraint_residual", audit.hidden_max, tol["hidden"]))
    except IndexOneError as exc:
        checks.append(_check("integration", None, 0.0, str(exc)))
    doc = {
        "experiment": name,
        "problem": cfg["problem"],
        "tableau": tableau_label(cfg),
        "summary": "pass" if all(c["pass"] for c in checks) else "fail",
        "checks": checks,
    }
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / f"{name}-check.json", doc, "check")
    return doc


def list_presets() -> str:
    width = max(map(len, PRESETS))
    lines = ["presets:"]
    lines += [f"  {k.ljust(width)}  {PRESET_NOTES.get(k, '')}" for k in PRESETS]
    lines.append("problems: " + ", ".join(sorted(PROBLEMS)))
    lines.append("tableaux: midpoint, gauss2, gauss3, rattle-midpoint, explicit-euler")
    return "\n".join(lines)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indexone", description="Symplectic integration of index-1 constrained Hamiltonian systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, help_ in (
        ("run", "integrate and write trajectory CSV plus diagnostics JSON"),
        ("converge", "estimate the convergence order over a dt sweep"),
        ("check", "symplecticity and constraint checks with a pass/fail summary"),
    ):
        p = sub.add_parser(cmd, help=help_)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--preset", metavar="NAME")
        p.add_argument("--out", metavar="DIR", default=".")
        p.add_argument("--dt", type=float)
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--tableau", choices=["midpoint", "gauss2", "gauss3", "rattle-midpoint", "explicit-euler"])
        p.add_argument("--quiet", action="store_true")
    sub.add_parser("list", help="list embedded presets")
    return parser


def _summary_line(command: str, doc: dict) -> str:
    if command == "run":
        parts = [f"{doc['experiment']}: {doc['n_steps']} steps"]
        if "energy" in doc:
            parts.append(f"max|dH|={doc['energy']['max_abs']:.3e}")
        parts.append(f"res_g={doc['constraints']['endpoint_max']:.3e}")
        if "symplecticity" in doc:
            parts.append(f"defect={doc['symplecticity']['defect']:.3e}")
        if "convergence" in doc and doc["convergence"]["order"] is not None:
            parts.append(f"order={doc['convergence']['order']:.4f}")
        return ", ".join(parts)
    if command == "converge":
        order = doc["convergence"]["order"]
        return f"order: {order:.4f}" if order is not None else "order: unavailable"
    lines = [f"{doc['experiment']}: {doc['summary']}"]
    for c in doc["checks"]:
        v = "n/a" if c["value"] is None else f"{c['value']:.3e}"
        lines.append(f"  {'pass' if c['pass'] else 'FAIL'}  {c['name']} = {v} (<= {c['threshold']:.1e})")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_presets())
        return EXIT_OK
    out = Path(args.out)
    try:
        cfg = resolve_config(args)
        handler = {"run": run_experiment, "converge": converge_experiment, "check": check_experiment}[args.command]
        doc = handler(cfg, out)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except StepFailureError as exc:
        return _fail(exc, EXIT_STEP)
    except IndexOneError as exc:
        return _fail(exc, EXIT_STEP if getattr(exc, "step", None) else EXIT_OTHER)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except ValueError as exc:
        return _fail(exc, EXIT_CONFIG)
    if not args.quiet:
        print(_summary_line(args.command, doc))
    if args.command == "check" and doc["summary"] != "pass":
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps(error_record(exc)), file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
