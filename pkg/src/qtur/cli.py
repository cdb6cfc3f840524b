"""Command line interface: parameter sweeps, invariant suites, config inspection.

``qtur run --config sweep.json`` writes one CSV row per sweep point plus a
JSON sidecar; ``qtur verify`` runs the seeded invariant suites;
``qtur info --config sweep.json`` prints the resolved settings.

Exit codes: 0 success, 1 verification failure, 2 invalid configuration,
3 numerical non-convergence, 4 invariant violated during a sweep.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, oscillator, suites, thermo
from .errors import ConditioningError, ConvergenceError, QturError
from .lindblad import JumpSpec

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_INVARIANT = 4

SCHEMA_VERSION = "engine-report/1"

_RANGE = {
    "type": "object",
    "required": ["start", "stop", "num"],
    "properties": {
        "start": {"type": "number"},
        "stop": {"type": "number"},
        "num": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["engine"],
    "additionalProperties": False,
    "properties": {
        "engine": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["oscillator-analytic", "oscillator-matrix", "custom-detailed-balanced"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in ("omega0", "T_c", "T_h", "Gamma", "tau")},
                },
                "custom": {
                    "type": "object",
                    "required": ["H0", "drives", "jumps", "coefficients", "T_c", "T_h", "tau"],
                    "additionalProperties": False,
                    "properties": {
                        "H0": _MATRIX,
                        "H0_imag": _MATRIX,
                        "drives": {"type": "array", "items": _MATRIX},
                        "drives_imag": {"type": "array", "items": _MATRIX},
                        "jumps": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "required": ["lower", "upper", "rate"],
                                "additionalProperties": False,
                                "properties": {
                                    "lower": {"type": "integer", "minimum": 0},
                                    "upper": {"type": "integer", "minimum": 1},
                                    "rate": {"type": "number", "minimum": 0},
                                },
                            },
                        },
                        "coefficients": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                        "sine_coefficients": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                        "alpha_warp": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                        "T_c": {"type": "number", "exclusiveMinimum": 0},
                        "T_h": {"type": "number", "exclusiveMinimum": 0},
                        "tau": {"type": "number", "exclusiveMinimum": 0},
                        "rate_scale": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "sweep": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["parameter"],
                "additionalProperties": False,
                "properties": {
                    "parameter": {"type": "string"},
                    "values": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                    "log_range": _RANGE,
                    "linear_range": _RANGE,
                },
                "oneOf": [
                    {"required": ["values"]},
                    {"required": ["log_range"]},
                    {"required": ["linear_range"]},
                ],
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nodes": {"type": "integer", "minimum": 3},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "max_nodes": {"type": "integer", "minimum": 3},
                "quad_tol": {"type": "number", "exclusiveMinimum": 0},
                "fock_dim": {"type": "integer", "minimum": 2},
                "fock_start": {"type": "integer", "minimum": 2},
                "fock_step": {"type": "integer", "minimum": 1},
                "fock_max": {"type": "integer", "minimum": 2},
                "tail_tol": {"type": "number", "exclusiveMinimum": 0},
                "dim_rtol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"path": {"type": "string", "minLength": 1}},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

NUMERIC_DEFAULTS = {
    "nodes": 257,
    "rtol": 1e-7,
    "max_nodes": 4097,
    "quad_tol": 1e-9,
    "fock_dim": None,
    "fock_start": 30,
    "fock_step": 10,
    "fock_max": 400,
    "tail_tol": 1e-12,
    "dim_rtol": 1e-8,
}

OSCILLATOR_INPUTS = ("omega0", "T_c", "T_h", "Gamma", "t_eq", "tau")
CUSTOM_INPUTS = ("T_c", "T_h", "tau", "rate_scale")

REPORT_COLUMNS = (
    "P_w",
    "P_W",
    "W_ad",
    "w_avg",
    "J_q",
    "J_q_direct",
    "P_w_direct",
    "sigma_dot",
    "DeltaP_w",
    "DeltaI_w",
    "DeltaI_w_skew",
    "ratio_2dIw_over_dPw",
    "eta",
    "eta_C",
    "eta_PS",
    "eta_Q",
    "eta_cl",
    "f_value",
    "tur_residual",
    "tur_scale",
    "engine_flag",
    "operating",
    "fd_derivatives",
    "hd_phi",
    "hd_hd",
    "hd_hd_prime",
    "nodes",
    "fock_dim",
)


class ConfigError(QturError, ValueError):
    """The configuration file is unreadable or violates the schema."""


# ---------------------------------------------------------------- config


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    """Validate against the schema and fill defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    cfg = copy.deepcopy(raw)
    engine = cfg["engine"]
    kind = engine["kind"]
    if kind == "custom-detailed-balanced":
        if "custom" not in engine:
            raise ConfigError("custom-detailed-balanced engines need an 'engine.custom' section")
        engine["custom"].setdefault("rate_scale", 1.0)
        allowed = CUSTOM_INPUTS
    else:
        defaults = {"omega0": 1.0, "T_c": 0.2, "T_h": 2.0, "Gamma": 1.0, "tau": 100.0}
        engine["params"] = {**defaults, **engine.get("params", {})}
        allowed = OSCILLATOR_INPUTS
    cfg["numerics"] = {**NUMERIC_DEFAULTS, **cfg.get("numerics", {})}
    cfg.setdefault("sweep", [])
    cfg.setdefault("output", {})
    cfg["output"].setdefault("path", "engine_report.csv")
    cfg.setdefault("seed", 0)
    seen = set()
    for axis in cfg["sweep"]:
        name = axis["parameter"]
        if name not in allowed:
            raise ConfigError(f"sweep parameter {name!r} is not one of {', '.join(allowed)}")
        if name in seen:
            raise ConfigError(f"sweep parameter {name!r} appears twice")
        seen.add(name)
        if "log_range" in axis and (axis["log_range"]["start"] <= 0 or axis["log_range"]["stop"] <= 0):
            raise ConfigError(f"log_range for {name!r} needs positive bounds")
        axis["resolved"] = [float(v) for v in axis_values(axis)]
    if {"Gamma", "t_eq"} <= seen:
        raise ConfigError("sweep over both Gamma and t_eq is contradictory")
    return cfg


def axis_values(axis: dict) -> np.ndarray:
    if "values" in axis:
        return np.asarray(axis["values"], dtype=float)
    if "log_range" in axis:
        r = axis["log_range"]
        return np.logspace(math.log10(r["start"]), math.log10(r["stop"]), r["num"])
    r = axis["linear_range"]
    return np.linspace(r["start"], r["stop"], r["num"])


def sweep_points(cfg: dict) -> list[dict]:
    """Cartesian product of the sweep axes, first axis slowest."""
    axes = cfg["sweep"]
    if not axes:
        return [{}]
    names = [a["parameter"] for a in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(a["resolved"] for a in axes))]


# ---------------------------------------------------------------- evaluation


def _oscillator_point(cfg: dict, point: dict):
    params = dict(cfg["engine"]["params"])
    for name, val in point.items():
        if name == "t_eq":
            params["Gamma"] = 1.0 / val
        else:
            params[name] = val
    p = oscillator.OscillatorParams(**params)
    num = cfg["numerics"]
    if cfg["engine"]["kind"] == "oscillator-analytic":
        rep = oscillator.evaluate(p, tol=num["quad_tol"])
    else:
        rep = oscillator.evaluate_matrix(
            p,
            start_dim=num["fock_start"],
            step=num["fock_step"],
            max_dim=num["fock_max"],
            tail_tol=num["tail_tol"],
            dim_rtol=num["dim_rtol"],
            nodes=num["nodes"],
            rtol=num["rtol"],
            max_nodes=num["max_nodes"],
            dim=num["fock_dim"],
        )
    inputs = {"omega0": p.omega0, "T_c": p.T_c, "T_h": p.T_h, "Gamma": p.Gamma, "t_eq": p.t_eq, "tau": p.tau}
    return inputs, rep


def _matrix(rows, imag=None) -> np.ndarray:
    m = np.asarray(rows, dtype=float).astype(complex)
    if imag is not None:
        m = m + 1j * np.asarray(imag, dtype=float)
    return m


def custom_system(spec: dict) -> thermo.ParametricSystem:
    """Detailed-balanced engine from a ``custom`` config section."""
    h0 = _matrix(spec["H0"], spec.get("H0_imag"))
    imag = spec.get("drives_imag") or [None] * len(spec["drives"])
    drives = [_matrix(v, im) for v, im in zip(spec["drives"], imag)]
    coeffs = np.asarray(spec["coefficients"], dtype=float).reshape(len(drives), -1)
    sines = spec.get("sine_coefficients")
    sines = None if sines is None else np.asarray(sines, dtype=float).reshape(coeffs.shape)
    tau = float(spec["tau"])
    mech, mech_dot = thermo.fourier_drive(coeffs, sines, tau)
    alpha, alpha_dot = thermo.warped_alpha(tau, float(spec.get("alpha_warp", 0.0)))
    protocol = thermo.Protocol(
        tau=tau,
        T_c=float(spec["T_c"]),
        T_h=float(spec["T_h"]),
        alpha=alpha,
        mechanical=mech,
        alpha_dot=alpha_dot,
        mechanical_dot=mech_dot,
    )
    scale = float(spec.get("rate_scale", 1.0))
    specs = [JumpSpec(j["lower"], j["upper"], j["rate"] * scale) for j in spec["jumps"]]
    return thermo.ParametricSystem(protocol, thermo.LinearDrive(h0, drives), thermo.DetailedBalancedFamily(specs))


def _custom_point(cfg: dict, point: dict):
    spec = {**cfg["engine"]["custom"], **point}
    num = cfg["numerics"]
    rep = thermo.evaluate(custom_system(spec), nodes=num["nodes"], rtol=num["rtol"], max_nodes=num["max_nodes"])
    inputs = {k: float(spec[k]) for k in CUSTOM_INPUTS}
    return inputs, rep


def evaluate_point(cfg: dict, point: dict):
    """``(inputs, report)`` for one sweep point."""
    if cfg["engine"]["kind"] == "custom-detailed-balanced":
        return _custom_point(cfg, point)
    return _oscillator_point(cfg, point)


def _evaluate_safe(args):
    cfg, point = args
    try:
        inputs, rep = evaluate_point(cfg, point)
        return {"ok": True, "inputs": inputs, "report": rep.as_dict()}
    except (ConvergenceError, ConditioningError) as exc:
        return {"ok": False, "kind": "convergence", "point": point, "error": str(exc)}


def check_invariants(row: dict) -> list[str]:
    """Ordering chain, second law and TUR on one evaluated row."""
    bad = []
    slack = 1e-12
    dP, dI, sigma = row["DeltaP_w"], row["DeltaI_w"], row["sigma_dot"]
    if sigma < -slack * max(1.0, abs(sigma)):
        bad.append(f"negative entropy production {sigma:.6e}")
    if 2 * dI < -slack * abs(dP) or 2 * dI > dP + slack * abs(dP):
        bad.append(f"0 <= 2 DeltaI_w <= DeltaP_w violated ({2 * dI:.6e} vs {dP:.6e})")
    if row["tur_residual"] < -1e-9 * row["tur_scale"]:
        bad.append(f"TUR residual {row['tur_residual']:.6e} below -1e-9 scale")
    if row["engine_flag"] and row["operating"]:
        eta, eta_q, eta_cl, eta_c = row["eta"], row["eta_Q"], row["eta_cl"], row["eta_C"]
        if eta > eta_c + slack:
            bad.append(f"eta {eta:.6e} above Carnot")
        if eta > eta_q + slack:
            bad.append(f"eta {eta:.6e} above eta_Q {eta_q:.6e}")
        if eta_q > eta_cl + slack:
            bad.append(f"eta_Q {eta_q:.6e} above eta_cl {eta_cl:.6e}")
    return bad


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def csv_header(kind: str) -> list[str]:
    inputs = CUSTOM_INPUTS if kind == "custom-detailed-balanced" else OSCILLATOR_INPUTS
    return list(inputs) + list(REPORT_COLUMNS)


def write_outputs(cfg: dict, rows: list[dict], violations: list[dict], out: Path) -> None:
    header = csv_header(cfg["engine"]["kind"])
    lines = [f"# schema: {SCHEMA_VERSION}", ",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(row.get(k)) for k in header))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "config": _public_config(cfg),
        "rows": len(rows),
        "columns": header,
        "violations": violations,
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _public_config(cfg: dict) -> dict:
    c = copy.deepcopy(cfg)
    for axis in c.get("sweep", []):
        axis.pop("resolved", None)
    return c


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def run(cfg: dict, out: Path | None = None, jobs: int | None = None) -> int:
    out = Path(out or cfg["output"]["path"])
    points = sweep_points(cfg)
    tasks = [(cfg, p) for p in points]
    jobs = max(1, jobs or os.cpu_count() or 1)
    if jobs == 1 or len(tasks) == 1:
        results = [_evaluate_safe(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_evaluate_safe, tasks))
    rows, violations, failures = [], [], []
    for k, res in enumerate(results):
        if not res["ok"]:
            failures.append({"index": k, **res})
            continue
        row = {**res["inputs"], **res["report"]}
        rows.append(row)
        for msg in check_invariants(row):
            violations.append({"index": k, "inputs": res["inputs"], "violation": msg})
    write_outputs(cfg, rows, violations + failures, out)
    for f in failures:
        print(f"point {f['index']} did not converge: {f['error']}", file=sys.stderr)
    for v in violations:
        print(f"point {v['index']}: {v['violation']}", file=sys.stderr)
    if failures:
        return EXIT_CONVERGENCE
    if violations:
        return EXIT_INVARIANT
    return EXIT_OK


# ---------------------------------------------------------------- verify

DEFAULT_SUITES = ("inner-product", "ordering", "tur", "saturation", "theta", "detailed-balance", "oracle")


def verify(suite: str | None, seed: int, count: int | None, inject_violation: bool = False) -> tuple[int, dict]:
    names = DEFAULT_SUITES if suite in (None, "all") else (suite,)
    report = {"seed": seed, "suites": {}}
    for name in names:
        kw = {}
        if name == "detailed-balance" and inject_violation:
            kw["inject_violation"] = True
        res = suites.run_suite(name, seed, count, **kw)
        report["suites"][name] = res.as_dict()
    if inject_violation and "detailed-balance" not in names:
        res = suites.run_suite("detailed-balance", seed, count, inject_violation=True)
        report["suites"]["detailed-balance"] = res.as_dict()
    report["ok"] = all(s["ok"] for s in report["suites"].values())
    return (EXIT_OK if report["ok"] else EXIT_VERIFY_FAILED), report


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtur", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qtur {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="evaluate a sweep and write CSV + JSON sidecar")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="CSV path (overrides output.path)")
    p_run.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")

    p_ver = sub.add_parser("verify", help="run the seeded invariant suites")
    p_ver.add_argument("--suite", choices=("all",) + DEFAULT_SUITES, default="all")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--count", type=int, default=None, help="cases per suite (suite default if omitted)")
    p_ver.add_argument("--inject-violation", action="store_true", help="add a non-detailed-balanced negative control")
    p_ver.add_argument("--out", help="write the JSON report here as well as to stdout")

    p_info = sub.add_parser("info", help="print the resolved configuration")
    p_info.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            if args.count is not None and args.count < 1:
                raise ConfigError("--count must be positive")
            code, report = verify(args.suite, args.seed, args.count, args.inject_violation)
            text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
            print(text)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            return code
        cfg = load_config(args.config)
        if args.command == "info":
            info = _public_config(cfg)
            info["points"] = sweep_points(cfg)
            print(json.dumps(info, indent=2, sort_keys=True, default=_json_default))
            return EXIT_OK
        return run(cfg, args.out, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QturError as exc:
        # parameter domain errors surfacing from the config are configuration problems
        if isinstance(exc, ValueError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
