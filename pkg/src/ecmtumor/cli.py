"""Command-line experiment harness.

Usage::

    ecmtumor [--config PATH] [--out DIR] [--jobs N] [--seed U64]
             [--paper-verbatim-transform] [--param KEY=VALUE ...]
             {check,stationary,simulate,sweep,oracles} [command options]

A run is described by a JSON config with the sections ``params``,
``numerics``, ``init`` and ``sweep``; ``--param`` overrides single entries
with a dotted path (``--param mu=3`` is short for ``--param params.mu=3``).
Every JSON file written is validated against the schemas shipped in
``ecmtumor/schemas``.

Exit codes: 0 success, 1 oracle failure, 2 configuration or validation
error, 3 radius collapse during a simulation.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import model, oracles, stationary, timedep
from .errors import EcmTumorError, InvalidParams, RadiusCollapse
from .model import ModelParams

log = logging.getLogger("ecmtumor")

COMMANDS = ("check", "stationary", "simulate", "sweep", "oracles")

EXIT_OK = 0
EXIT_ORACLE = 1
EXIT_CONFIG = 2
EXIT_COLLAPSE = 3

DEFAULT_NUMERICS: dict[str, Any] = {
    "grid_n": 1024,
    "tol_R": 1e-6,
    "n": 512,
    "dt": 1e-3,
    "T": 40.0,
    "cadence": 0.5,
    "converge_tol": 1e-2,
    "monotone_slack": 1e-5,
    "interpolation": "pchip",
}
DEFAULT_INIT: dict[str, Any] = {"kind": "perturbed", "amplitude": 0.05, "seed": None, "path": None}
DEFAULT_SWEEP: dict[str, Any] = {"axis": "mu", "values": [0.5, 3.0, 10.0], "simulate": False}

U64_MAX = 2**64 - 1


class ConfigError(EcmTumorError):
    """Malformed configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    numerics: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_NUMERICS))
    init: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_INIT))
    sweep: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_SWEEP))
    output_dir: Path = Path(".")
    jobs: int = 1
    verbatim: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "params": self.params.to_dict(),
            "numerics": self.numerics,
            "init": self.init,
            "sweep": self.sweep,
            "verbatim": self.verbatim,
        }


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict[str, Any], assignment: str) -> None:
    """Apply ``key=value`` with a dotted key; bare keys address ``params``."""
    if "=" not in assignment:
        raise ConfigError(f"--param expects KEY=VALUE, got {assignment!r}")
    key, text = assignment.split("=", 1)
    path = key.strip().split(".")
    if len(path) == 1:
        path = ["params"] + path
    node = raw
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key!r} does not name a config section")
    node[path[-1]] = _parse_value(text)


def _check_numerics(num: dict[str, Any]) -> None:
    unknown = set(num) - set(DEFAULT_NUMERICS)
    if unknown:
        raise ConfigError(f"unknown numerics keys: {sorted(unknown)}")
    for key in ("grid_n", "tol_R", "n", "dt", "cadence", "converge_tol"):
        if not isinstance(num[key], (int, float)) or not num[key] > 0:
            raise ConfigError(f"numerics.{key} must be positive")
    for key in ("T", "monotone_slack"):
        if not isinstance(num[key], (int, float)) or num[key] < 0:
            raise ConfigError(f"numerics.{key} must be nonnegative")
    if num["interpolation"] not in ("pchip", "linear"):
        raise ConfigError("numerics.interpolation must be 'pchip' or 'linear'")
    num["grid_n"] = int(num["grid_n"])
    num["n"] = int(num["n"])


def _check_init(init: dict[str, Any]) -> None:
    unknown = set(init) - set(DEFAULT_INIT)
    if unknown:
        raise ConfigError(f"unknown init keys: {sorted(unknown)}")
    if init["kind"] not in ("stationary", "perturbed", "file"):
        raise ConfigError("init.kind must be one of stationary, perturbed, file")
    amp = init["amplitude"]
    if not isinstance(amp, (int, float)) or not 0.0 <= amp <= 0.5:
        raise ConfigError("init.amplitude must lie in [0, 0.5]")
    seed = init["seed"]
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)
                             or not 0 <= seed <= U64_MAX):
        raise ConfigError("init.seed must be an unsigned 64-bit integer or null")
    if init["kind"] == "file" and not init["path"]:
        raise ConfigError("init.kind = 'file' needs init.path")


def _check_sweep(sw: dict[str, Any]) -> None:
    unknown = set(sw) - set(DEFAULT_SWEEP)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    if sw["axis"] not in {f for f in ModelParams().to_dict()}:
        raise ConfigError(f"sweep.axis {sw['axis']!r} is not a model parameter")
    if not isinstance(sw["values"], list) or not sw["values"]:
        raise ConfigError("sweep.values must be a nonempty list")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in sw["values"]):
        raise ConfigError("sweep.values must be numbers")


def build_config(args: argparse.Namespace) -> RunConfig:
    raw: dict[str, Any] = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"params", "numerics", "init", "sweep"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    raw = copy.deepcopy(raw)
    for assignment in args.param or []:
        apply_override(raw, assignment)
    if args.seed is not None:
        raw.setdefault("init", {})["seed"] = args.seed
    if getattr(args, "values", None) is not None:
        raw.setdefault("sweep", {})["values"] = args.values
    if getattr(args, "axis", None) is not None:
        raw.setdefault("sweep", {})["axis"] = args.axis

    params = ModelParams.from_dict(raw.get("params", {}))
    numerics = {**DEFAULT_NUMERICS, **raw.get("numerics", {})}
    init = {**DEFAULT_INIT, **raw.get("init", {})}
    sweep = {**DEFAULT_SWEEP, **raw.get("sweep", {})}
    _check_numerics(numerics)
    _check_init(init)
    _check_sweep(sweep)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return RunConfig(args.command, params, numerics, init, sweep, Path(args.out), args.jobs,
                     bool(args.paper_verbatim_transform))


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def load_schema(name: str) -> dict[str, Any]:
    text = resources.files("ecmtumor").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc: dict[str, Any], schema: str) -> None:
    doc = _jsonable(doc)
    jsonschema.validate(doc, load_schema(schema))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def error_doc(exc: BaseException) -> dict[str, Any]:
    return {"error": {"kind": type(exc).__name__, "message": str(exc)}}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _laws(params: ModelParams) -> model.ConstitutiveSet:
    return model.default_laws(params)


def cmd_check(cfg: RunConfig) -> int:
    p = cfg.params
    rep = model.check_structural(p, _laws(p))
    doc = {
        "params": p.to_dict(),
        "warnings": model.table_warnings(p),
        "structural": rep.to_dict(),
        "m_eq": p.m_eq,
    }
    write_json(cfg.output_dir / "check_report.json", doc, "check_report")
    for w in doc["warnings"]:
        log.warning(w)
    print(f"structural conditions {'hold' if rep.ok else 'violated'} "
          f"({len(rep.violations)} reported points)")
    return EXIT_OK


def _stationary_meta(sol: stationary.StationarySolution, p: ModelParams) -> dict[str, Any]:
    laws = _laws(p)
    return {
        "R_star": sol.R_star,
        "grid_n": int(sol.r.size - 1),
        "residuals": sol.residuals,
        "structural": model.check_structural(p, laws).to_dict(),
        "warnings": model.table_warnings(p),
        "viability": model.viability(sol.R_star, p),
        "termination": sol.meta.get("termination"),
        "tau": sol.meta.get("tau"),
        "n_shoots": sol.meta.get("n_shoots"),
        "params": p.to_dict(),
    }


def run_stationary(p: ModelParams, num: dict[str, Any], out: Path) -> dict[str, Any]:
    sol = stationary.stationary_solution(p, _laws(p), grid_n=num["grid_n"], tol_R=num["tol_R"])
    out.mkdir(parents=True, exist_ok=True)
    sol.to_csv(out / "stationary_profile.csv")
    meta = _stationary_meta(sol, p)
    write_json(out / "stationary_meta.json", meta, "stationary_meta")
    return {"solution": sol, "meta": meta}


def cmd_stationary(cfg: RunConfig) -> int:
    res = run_stationary(cfg.params, cfg.numerics, cfg.output_dir)
    meta = res["meta"]
    print(f"R* = {meta['R_star']:.10g}  residuals: "
          + ", ".join(f"{k}={v:.2e}" for k, v in meta["residuals"].items()))
    return EXIT_OK


def _initial_data(cfg_init: dict[str, Any], p: ModelParams, num: dict[str, Any],
                  sol: stationary.StationarySolution | None) -> timedep.InitialData:
    kind = cfg_init["kind"]
    if kind == "file":
        data = np.genfromtxt(cfg_init["path"], delimiter=",", names=True)
        try:
            R0 = float(data["R"][0])
            return timedep.InitialData(R0, data["sigma"], data["m"], data["E"],
                                       meta={"kind": "file", "path": str(cfg_init["path"])})
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad initial-data file: {exc}") from exc
    assert sol is not None
    amp = cfg_init["amplitude"] if kind == "perturbed" else 0.0
    return timedep.initial_from_stationary(sol, n=num["n"], amplitude=amp, seed=cfg_init["seed"])


def run_simulate(p: ModelParams, num: dict[str, Any], init_cfg: dict[str, Any], out: Path,
                 verbatim: bool) -> dict[str, Any]:
    laws = _laws(p)
    sol = stationary.stationary_solution(p, laws, grid_n=num["grid_n"], tol_R=num["tol_R"])
    init = _initial_data(init_cfg, p, num, sol)
    series = timedep.simulate(p, laws, init, T=float(num["T"]), dt=float(num["dt"]),
                              cadence=float(num["cadence"]), reference=sol, verbatim=verbatim,
                              interpolation=num["interpolation"])
    out.mkdir(parents=True, exist_ok=True)
    series.write_series(out / "series.csv")
    series.write_snapshots(out / "snapshots.csv")
    fin = series.final
    sc = series.scalars
    summary = {
        "R_star": sol.R_star,
        "converged": timedep.converged(series, tol=num["converge_tol"],
                                       monotone_slack=num["monotone_slack"]),
        "final": {
            "t": fin.t,
            "R": fin.R,
            "dist_sigma": float(sc["dist_sigma"][-1]),
            "dist_E": float(sc["dist_E"][-1]),
            "dist_m": float(sc["dist_m"][-1]),
            "sup_distance": float(series.sup_distance()[-1]),
            "E_min": float(np.min(fin.E)),
            "E_max": float(np.max(fin.E)),
        },
        "min_R": float(np.min(sc["R"])),
        "stationary_E": {"min": float(np.min(sol.E)), "max": float(np.max(sol.E))},
        "init": {"kind": init_cfg["kind"], "amplitude": init_cfg["amplitude"],
                 "seed": init_cfg["seed"]},
        "numerics": num,
        "verbatim": verbatim,
        "params": p.to_dict(),
        "warnings": model.table_warnings(p),
    }
    write_json(out / "simulate_summary.json", summary, "simulate_summary")
    return summary


def cmd_simulate(cfg: RunConfig) -> int:
    s = run_simulate(cfg.params, cfg.numerics, cfg.init, cfg.output_dir, cfg.verbatim)
    print(f"converged={s['converged']}  sup distance={s['final']['sup_distance']:.3e}  "
          f"min R={s['min_R']:.6g}")
    return EXIT_OK


def _sweep_row(args: tuple) -> dict[str, Any]:
    index, axis, value, base, num, init_cfg, simulate_too, out, verbatim = args
    row: dict[str, Any] = {"index": index, "axis": axis, "value": value, "R_star": None,
                           "viability": None, "converged": None, "dist_sigma": None,
                           "dist_E": None, "dist_m": None, "error": None}
    row_dir = Path(out) / f"row_{index:03d}"
    try:
        p = ModelParams.from_dict(base).replace(**{axis: value})
        if simulate_too:
            s = run_simulate(p, num, init_cfg, row_dir, verbatim)
            row.update(R_star=s["R_star"], converged=s["converged"],
                       dist_sigma=s["final"]["dist_sigma"], dist_E=s["final"]["dist_E"],
                       dist_m=s["final"]["dist_m"], viability=model.viability(s["R_star"], p))
        else:
            meta = run_stationary(p, num, row_dir)["meta"]
            row.update(R_star=meta["R_star"], viability=meta["viability"])
    except (EcmTumorError, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_sweep(cfg: RunConfig) -> int:
    sw = cfg.sweep
    base = cfg.params.to_dict()
    tasks = [(i, sw["axis"], float(v), base, cfg.numerics, cfg.init, bool(sw["simulate"]),
              str(cfg.output_dir), cfg.verbatim) for i, v in enumerate(sw["values"])]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_sweep_row, tasks))
    else:
        rows = [_sweep_row(t) for t in tasks]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cols = ["index", "axis", "value", "R_star", "viability", "converged", "dist_sigma",
            "dist_E", "dist_m", "error"]
    with open(cfg.output_dir / "sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[c]) for c in cols) + "\n")
    doc = {"axis": sw["axis"], "values": [float(v) for v in sw["values"]], "rows": rows,
           "params": base, "warnings": model.table_warnings(cfg.params)}
    write_json(cfg.output_dir / "sweep_summary.json", doc, "sweep_summary")
    for row in rows:
        status = row["error"] or f"R*={row['R_star']:.10g}"
        print(f"{sw['axis']}={row['value']:g}: {status}")
    return EXIT_OK if any(r["error"] is None for r in rows) else EXIT_CONFIG


def _csv_cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    s = str(x)
    return '"' + s.replace('"', '""') + '"' if ("," in s or '"' in s) else s


def cmd_oracles(cfg: RunConfig, theta_shift: float = 0.0) -> int:
    results = oracles.run_oracles(theta_shift=theta_shift)
    doc = {"theta_shift": theta_shift, "all_passed": all(r.passed for r in results),
           "oracles": [r.to_dict() for r in results]}
    write_json(cfg.output_dir / "oracles_report.json", doc, "oracles_report")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    return EXIT_OK if doc["all_passed"] else EXIT_ORACLE


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _float_list(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecmtumor", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", type=str, default=None, help="JSON run configuration")
    ap.add_argument("--out", type=str, default=".", help="output directory")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--seed", type=_u64, default=None, help="seed for the random perturbation")
    ap.add_argument("--paper-verbatim-transform", action="store_true",
                    help="divide the advection coefficient of the nutrient equation by c")
    ap.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="override a config entry; repeatable")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("check", help="table ranges and structural conditions")
    sub.add_parser("stationary", help="stationary radius and profiles")
    sub.add_parser("simulate", help="time-dependent run against the stationary state")
    sp = sub.add_parser("sweep", help="stationary radius (and optionally a simulation) per value")
    sp.add_argument("--axis", type=str, default=None, help="parameter to sweep (default mu)")
    sp.add_argument("--values", type=_float_list, default=None, help="comma-separated values")
    op = sub.add_parser("oracles", help="closed-form checks of the singular IVP solver")
    op.add_argument("--theta-shift", type=float, default=0.0,
                    help="perturb the slope formula (mutation test)")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = build_config(args)
        if cfg.command == "check":
            return cmd_check(cfg)
        if cfg.command == "stationary":
            return cmd_stationary(cfg)
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        if cfg.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_oracles(cfg, theta_shift=args.theta_shift)
    except RadiusCollapse as exc:
        code = EXIT_COLLAPSE
        err = exc
    except (EcmTumorError, ValueError, OSError) as exc:
        code = EXIT_CONFIG
        err = exc
    doc = error_doc(err)
    try:
        write_json(out / "error.json", doc, "error")
    except OSError:
        pass
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
