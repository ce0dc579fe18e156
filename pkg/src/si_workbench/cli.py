"""Command-line entry point ``si-workbench``.

Exit codes: 0 success, 1 a check did not match its expectation, 2 bad
configuration, 3 singular point or turning point, 4 degenerate flag.

Config files are flat ``key = value`` text, one entry per line, ``#``
starting a comment. Recognised keys are the option names below (``case``,
``interval``, ``grid``, ``levels``, ``tol``, ``seed``, ``samples``, ``out``,
``csv``, ``sweep``, ``intermediate``); any other key is a parameter
assignment (a shape constant of the case, or ``b1``, ``b0``, ``R``).
Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import symexpr as se
from .changevar import TurningPointError, closed_z, numeric_z
from .ladder import ROUTE_TOL, flag_grid, solvable_spectrum
from .model import (CASE_IDS, NOT_SI, CaseSpec, FamilyError, ParamSet, catalog, make_case,
                    probe_grid)
from .parasusy import build_para_system, verify_para_algebra
from .potentials import GaugeError, potential_set
from .shapecheck import classify, two_step_residual, verify_case
from .spectral import SpectralError, isospectral_check

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_SINGULAR, EXIT_DEGENERATE = 0, 1, 2, 3, 4

CONFIG_KEYS = ("case", "interval", "grid", "levels", "tol", "seed", "samples", "out", "csv",
               "sweep", "intermediate")
PARAM_KEYS = ("b1", "b0", "R")
SWEEP_COLUMNS = ("param", "max_residual", "R2_est")
POTENTIAL_COLUMNS = ("x", "z", "Vm", "Vp", "Vi1", "Vi2")
NUMERIC_X_RANGE = (-3.0, 3.0)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    case_id: Optional[str] = None
    params: dict = field(default_factory=dict)
    interval: Optional[tuple] = None
    grid: Optional[int] = None
    levels: Optional[int] = None
    tol: Optional[float] = None
    seed: int = 0
    samples: int = 0
    out: Optional[str] = None
    csv: Optional[str] = None
    sweep: Optional[tuple] = None
    intermediate: str = "i1"
    timing: bool = False

    def validate(self):
        if self.command != "catalog":
            if self.case_id is None:
                raise ConfigError("no case given")
            if self.case_id not in CASE_IDS:
                raise ConfigError(f"unknown case {self.case_id!r}")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.grid is not None and (self.grid < 64 or self.grid & (self.grid - 1)):
            raise ConfigError("grid size must be a power of two >= 64")
        if self.levels is not None and self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if self.interval is not None and not self.interval[1] > self.interval[0]:
            raise ConfigError(f"empty interval {self.interval}")
        if self.intermediate not in ("i1", "i2"):
            raise ConfigError("intermediate must be i1 or i2")
        if self.samples < 0:
            raise ConfigError("samples must be >= 0")
        if self.case_id is not None:
            known = set(make_case(self.case_id).shape_dict) | set(PARAM_KEYS)
            names = set(self.params) | ({self.sweep[0]} if self.sweep else set())
            unknown = sorted(names - known)
            if unknown:
                raise ConfigError(f"case {self.case_id} has no parameter(s) {unknown}")
        if self.command == "sweep" and self.sweep is None:
            raise ConfigError("sweep needs --sweep name=lo:hi:steps")

    def to_dict(self):
        d = {"command": self.command, "case": self.case_id,
             "params": {k: self.params[k] for k in sorted(self.params)},
             "interval": None if self.interval is None else list(self.interval),
             "grid": self.grid, "levels": self.levels, "tol": self.tol, "seed": self.seed,
             "samples": self.samples, "intermediate": self.intermediate}
        if self.sweep is not None:
            d["sweep"] = {"param": self.sweep[0], "lo": self.sweep[1], "hi": self.sweep[2],
                          "steps": self.sweep[3]}
        return d


# ---------------------------------------------------------------- parsing

def _float(text, what):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{what}: not a number: {text!r}") from None


def _int(text, what):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{what}: not an integer: {text!r}") from None


def _interval(text):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ConfigError(f"interval must be a,b; got {text!r}")
    return (_float(parts[0], "interval"), _float(parts[1], "interval"))


def _sweep(text):
    try:
        name, rng = str(text).split("=", 1)
        lo, hi, steps = rng.split(":")
    except ValueError:
        raise ConfigError(f"sweep must be name=lo:hi:steps; got {text!r}") from None
    steps = _int(steps, "sweep steps")
    if steps < 2:
        raise ConfigError("a sweep needs at least 2 steps")
    return (name.strip(), _float(lo, "sweep"), _float(hi, "sweep"), steps)


def _assignment(text):
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    k, v = k.strip(), v.strip()
    if not k:
        raise ConfigError(f"empty key in {text!r}")
    return k, v


def read_config(path) -> dict:
    """Flat key = value file into a dict of strings."""
    out = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            k, v = _assignment(line)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{num}: {exc}") from None
        out[k] = v
    return out


def _apply(cfg: RunConfig, key: str, value: str):
    if key == "case":
        cfg.case_id = value
    elif key == "interval":
        cfg.interval = _interval(value)
    elif key == "grid":
        cfg.grid = _int(value, "grid")
    elif key == "levels":
        cfg.levels = _int(value, "levels")
    elif key == "tol":
        cfg.tol = _float(value, "tol")
    elif key == "seed":
        cfg.seed = _int(value, "seed")
    elif key == "samples":
        cfg.samples = _int(value, "samples")
    elif key == "out":
        cfg.out = value
    elif key == "csv":
        cfg.csv = value
    elif key == "sweep":
        cfg.sweep = _sweep(value)
    elif key == "intermediate":
        cfg.intermediate = value
    else:
        cfg.params[key] = _float(value, key)


def build_config(args) -> RunConfig:
    cfg = RunConfig(args.command)
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            _apply(cfg, k, v)
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            _apply(cfg, key, str(v))
    for item in getattr(args, "set", None) or []:
        _apply(cfg, *_assignment(item))
    cfg.timing = bool(getattr(args, "timing", False))
    cfg.validate()
    return cfg


def case_and_params(cfg: RunConfig, override: Optional[dict] = None) -> tuple:
    """CaseSpec and ParamSet from the assignments.

    Unset b0 follows the case: the parameter lock for dependent rows and the
    conditional constraint for conditional rows, both taken at the chosen b1.
    """
    vals = dict(cfg.params)
    vals.update(override or {})
    shape = {k: v for k, v in vals.items() if k not in PARAM_KEYS}
    case = make_case(cfg.case_id, **shape)
    d = case.default_params
    b1 = vals.get("b1", d.b1)
    row = case._row
    if "b0" in vals:
        b0 = vals["b0"]
    elif row.lock is not None:
        b0 = case.lock_b0(b1)
    elif row.constraint is not None:
        b0 = row.default_b[1]
        b0 = b0 - row.constraint(case.shape_dict, b1, b0)
    else:
        b0 = d.b0
    return case, ParamSet(float(b1), float(b0), float(vals.get("R", d.R)))


def _zmap(case: CaseSpec, interval):
    """Closed-form z(x) when there is one, numeric otherwise.

    A numeric map that meets a turning point is an error only when the
    interval was requested explicitly; otherwise the part reached is used.
    """
    cf = closed_z(case, interval)
    if cf is not None:
        return cf, {"kind": "closed", "interval": list(cf.interval), "branch": cf.branch,
                    "residual": cf.residual(case.family)}
    xr = tuple(interval) if interval is not None else NUMERIC_X_RANGE
    grid = flag_grid(case)
    z0 = float(grid[len(grid) // 2])
    table = numeric_z(case.family, xr, z0, x_init=0.5 * (xr[0] + xr[1]))
    if table.truncated and interval is not None:
        raise TurningPointError(f"A(z) vanishes inside x in {xr}; reached {table.interval}")
    info = {"kind": "numeric", "interval": list(table.interval), "branch": table.branch,
            "residual": table.residual(case.family), "note": "no closed form"}
    if table.truncated:
        info["truncated"] = "turning point inside the default x range"
    return table, info


# ---------------------------------------------------------------- commands

def cmd_catalog(cfg: RunConfig, as_json: bool = False):
    rows = [c.to_dict() for c in catalog()]
    if as_json:
        return EXIT_OK, rows, None
    lines = [f"{'case':<8}{'classification':<26}{'closed z':<10}constraint / lock"]
    for r in rows:
        extra = r["conditional_constraint"] or r["parameter_lock"] or ""
        lines.append(f"{r['case_id']:<8}{r['classification']:<26}"
                     f"{'yes' if r['closed_z'] else 'no':<10}{extra}")
    return EXIT_OK, None, "\n".join(lines)


def _expected_point_label(case: CaseSpec, c0: ParamSet) -> str:
    if case.is_conditional and not case.constraint_holds(c0):
        return NOT_SI
    return case.classification


def cmd_verify(cfg: RunConfig):
    case, c0 = case_and_params(cfg)
    grid = probe_grid(cfg.grid) if cfg.grid else None
    tol = cfg.tol if cfg.tol is not None else 1e-9
    v = verify_case(case, c0, grid, tol)
    expected = _expected_point_label(case, c0)
    verdict = v.classification
    if verdict == NOT_SI and case.is_conditional and not case.constraint_holds(c0):
        verdict = f"{NOT_SI} (constraint violated)"
    report = {"case": case.to_dict(), "params": c0.to_dict(), "params2": case.param_map(c0).to_dict(),
              "verdict": verdict, "expected": expected, "si": v.to_dict()}
    ok = v.classification == expected and (not v.is_two_step or v.shift_matches)
    if not ok:
        report["diff"] = {"classification": [v.classification, expected],
                          "R2": [v.estimated_R2, v.expected_R2]}
    if cfg.samples:
        c = classify(case, cfg.samples, cfg.seed)
        report["row_classification"] = c.to_dict()
        ok &= c.matches
    report["match"] = ok
    return (EXIT_OK if ok else EXIT_MISMATCH), report, None


def cmd_spectrum(cfg: RunConfig):
    case, c0 = case_and_params(cfg)
    zmap, zinfo = _zmap(case, cfg.interval)
    rep = isospectral_check(case, c0, zmap, cfg.interval, k=cfg.levels or 8,
                            n=cfg.grid or 2048, tol=cfg.tol if cfg.tol is not None else 1e-3)
    if cfg.csv:
        write_potentials_csv(cfg.csv, case, c0, zmap, n=201)
    out = rep.to_dict()
    out["zmap"] = zinfo
    return (EXIT_OK if rep.passed else EXIT_MISMATCH), out, None


def cmd_ladder(cfg: RunConfig):
    case, c0 = case_and_params(cfg)
    n = cfg.levels or 2
    res = solvable_spectrum(case, c0, n, strict=False)
    out = res.to_dict()
    out["params"] = c0.to_dict()
    if closed_z(case) is None:
        _, zinfo = _zmap(case, cfg.interval)
        out["zmap"] = zinfo
        out["notes"].append("no closed form for z(x); numeric z(x) used")
    if res.flag.degenerate:
        return EXIT_DEGENERATE, out, None
    tol = cfg.tol if cfg.tol is not None else ROUTE_TOL
    return (EXIT_OK if res.deviation <= tol else EXIT_MISMATCH), out, None


def cmd_parasusy(cfg: RunConfig):
    case, c0 = case_and_params(cfg)
    zmap, zinfo = _zmap(case, cfg.interval)
    iv = cfg.interval if cfg.interval is not None else zmap.interval
    try:
        system = build_para_system(case, c0, zmap, iv, n=cfg.grid or 1024,
                                   intermediate=cfg.intermediate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rep = verify_para_algebra(system)
    tol = cfg.tol if cfg.tol is not None else 1e-3
    out = {"case": case.case_id, "params": c0.to_dict(), "interval": list(iv), "n": system.n,
           "intermediate": cfg.intermediate, "residuals": rep.residuals,
           "smooth_residuals": rep.smooth_residuals, "exact": rep.exact, "tol": tol,
           "zmap": zinfo}
    ok = all(v <= tol for v in rep.residuals.values())
    ok &= all(v for k, v in rep.exact.items() if not k.endswith("blocks"))
    out["passed"] = bool(ok)
    return (EXIT_OK if ok else EXIT_MISMATCH), out, None


def _sweep_point(args):
    cfg, value = args
    name = cfg.sweep[0]
    try:
        case, c0 = case_and_params(cfg, {name: value})
        v = two_step_residual(case, c0, probe_grid(cfg.grid) if cfg.grid else None)
        return value, v.max_residual, v.estimated_R2
    except (se.SingularPointError, FamilyError, GaugeError):
        return value, float("nan"), float("nan")


def sweep_rows(cfg: RunConfig, jobs: int = 1) -> list:
    name, lo, hi, steps = cfg.sweep
    values = [float(v) for v in np.linspace(lo, hi, steps)]
    work = [(cfg, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_sweep_point, work))
    return [_sweep_point(w) for w in work]


def cmd_sweep(cfg: RunConfig, jobs: int = 1):
    rows = sweep_rows(cfg, jobs)
    if cfg.csv or cfg.out:
        write_csv(cfg.csv or cfg.out, SWEEP_COLUMNS, rows)
    finite = [r for r in rows if np.isfinite(r[1])]
    best = min(finite, key=lambda r: r[1]) if finite else None
    out = {"param": cfg.sweep[0], "rows": len(rows), "columns": list(SWEEP_COLUMNS),
           "minimum": None if best is None else {"param": best[0], "max_residual": best[1],
                                                  "R2_est": best[2]}}
    if not (cfg.csv or cfg.out):
        text = "\n".join([",".join(SWEEP_COLUMNS)] + [",".join(repr(float(v)) for v in r)
                                                      for r in rows])
        return EXIT_OK, None, text
    return EXIT_OK, out, None


def cmd_potentials(cfg: RunConfig):
    case, c0 = case_and_params(cfg)
    zmap, zinfo = _zmap(case, cfg.interval)
    path = cfg.csv or cfg.out
    if path is None:
        raise ConfigError("potentials needs --csv or --out")
    write_potentials_csv(path, case, c0, zmap, n=cfg.grid or 256)
    return EXIT_OK, {"csv": path, "columns": list(POTENTIAL_COLUMNS), "zmap": zinfo}, None


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _pointwise(e, zs) -> list:
    # Vi2 has a pole at z = -b0/b1; a grid point landing on it is left empty
    try:
        return list(se.evaluate(e, zs))
    except se.SingularPointError:
        out = []
        for zv in zs:
            try:
                out.append(float(se.evaluate(e, zv)))
            except se.SingularPointError:
                out.append(None)
        return out


def write_potentials_csv(path, case: CaseSpec, c0: ParamSet, zmap, n: int = 256):
    """Plot data (x, z, Vm, Vp, Vi1, Vi2); Vi2 is empty when b1 = 0 and at its pole."""
    lo, hi = zmap.interval
    xs = np.linspace(lo, hi, n + 2)[1:-1]
    zs = zmap.z(xs)
    p = potential_set(case.family, c0)
    cols = [xs, zs] + [se.evaluate(v, zs) for v in (p.v_minus, p.v_plus, p.v_i1)]
    vi2 = None if p.v_i2 is None else _pointwise(p.v_i2, zs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POTENTIAL_COLUMNS)
        for i in range(len(xs)):
            row = [repr(float(c[i])) for c in cols]
            row.append("" if vi2 is None or vi2[i] is None else repr(float(vi2[i])))
            w.writerow(row)


# ---------------------------------------------------------------- entry

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="si-workbench", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=True):
        sp.add_argument("--case", help="catalog row id, e.g. 1-1")
        sp.add_argument("--set", action="append", metavar="K=V",
                        help="parameter assignment (repeatable)")
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--out", help="write the JSON report here")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--timing", action="store_true",
                        help="add wall-clock timing to the report (breaks byte identity)")
        if grid:
            sp.add_argument("--interval", help="x interval a,b")
            sp.add_argument("--grid", type=int, help="grid size, power of two >= 64")
            sp.add_argument("--levels", type=int, help="levels / chain length")

    c = sub.add_parser("catalog", help="list the catalog rows")
    c.add_argument("--json", action="store_true")
    v = sub.add_parser("verify", help="shape-invariance verdict at one parameter point")
    common(v)
    v.add_argument("--samples", type=int, help="also classify the row from random draws")
    for name, text in (("spectrum", "isospectrality by finite differences"),
                       ("ladder", "solvable levels by both routes"),
                       ("parasusy", "paraSUSY algebra residuals"),
                       ("potentials", "CSV of the potentials along x")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--csv", help="CSV output path")
        if name == "parasusy":
            sp.add_argument("--intermediate", choices=("i1", "i2"))
    s = sub.add_parser("sweep", help="two-step residual along one parameter")
    common(s)
    s.add_argument("--sweep", required=False, help="name=lo:hi:steps")
    s.add_argument("--csv", help="CSV output path")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


COMMANDS = {"verify": cmd_verify, "spectrum": cmd_spectrum, "ladder": cmd_ladder,
            "parasusy": cmd_parasusy, "potentials": cmd_potentials}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def run(argv=None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        if args.command == "catalog":
            code, obj, text = cmd_catalog(RunConfig("catalog"), args.json)
            stdout.write(_dumps(obj) if obj is not None else text + "\n")
            return code
        cfg = build_config(args)
        if args.command == "sweep":
            code, obj, text = cmd_sweep(cfg, max(1, args.jobs))
        else:
            code, obj, text = COMMANDS[args.command](cfg)
    except (ConfigError, FamilyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (se.SingularPointError, TurningPointError, GaugeError, SpectralError) as exc:
        print(f"singular: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    if text is not None:
        stdout.write(text + "\n")
        return code
    report = {"tool": "si-workbench", "version": __version__, "config": cfg.to_dict(),
              "exit_code": code, "result": obj}
    if cfg.timing:
        report["timing_seconds"] = time.perf_counter() - t0
    blob = _dumps(report)
    if cfg.out and args.command != "sweep":
        with open(cfg.out, "w") as fh:
            fh.write(blob)
        stdout.write(f"{args.command} {cfg.case_id}: exit {code}, report in {cfg.out}\n")
    else:
        stdout.write(blob)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
