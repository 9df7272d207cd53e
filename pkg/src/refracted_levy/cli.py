"""Command-line front end.

    refracted-levy run --config run.json --out results/
    refracted-levy compare --config cmp.json --out results/

Exit codes: 0 success, 1 comparison outside tolerance, 2 invalid input,
3 numerical failure. Failures also write ``error.json`` to the output
directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import DomainError, InvalidConfig, LevyError
from .fluctuation import (
    ExitQuery,
    machinery,
    one_sided_down,
    one_sided_up,
    resolvent,
    resolvent_mass,
    ruin_report,
    two_sided_down,
    two_sided_up,
)
from .levy_model import LevyModel, RateProfile, StepProfile
from .refracted import build_w, build_z
from .simulator import PathConfig, mc_exits, mc_occupation, mc_ruin, mc_terminal, simulate_path
from .volterra import convergence_report, solve_w_prime, solve_z_prime

log = logging.getLogger("refracted_levy")


@dataclass
class Table:
    header: List[str]
    rows: List[list]
    summary: Dict[str, object] = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _path_config(cfg: RunConfig) -> PathConfig:
    n = cfg.numeric
    return PathConfig(horizon=n.horizon, h_sim=n.h_sim, seed=n.seed, scheme=n.scheme)


def _rows_every(grid, stride: int):
    idx = np.arange(0, grid.n + 1, max(1, stride))
    if idx[-1] != grid.n:
        idx = np.append(idx, grid.n)
    return idx


# ---------------------------------------------------------------- tasks


def task_scale(cfg: RunConfig, model: LevyModel, profile: RateProfile) -> Table:
    n = cfg.numeric
    mach = machinery(model, profile, n.q, cfg.task.d, n.h, n.x_max)
    w, z = mach.w_grid, mach.z_grid
    rows = []
    for i in _rows_every(w, n.stride):
        x = float(w.x[i])
        zz = float(mach.z(x)) if x >= 0.0 else 1.0
        rows.append([x, float(w.values[i]), float(w.derivatives[i]), zz, float(mach.u(x))])
    return Table(["x", "w", "w_derivative", "z", "u"], rows, {"w0": mach.w0, "kind": mach.kind})


_EXITS = {
    "two_sided_up": two_sided_up,
    "two_sided_down": two_sided_down,
    "one_sided_down": one_sided_down,
    "one_sided_up": one_sided_up,
}


def _exit_names(task) -> List[str]:
    names = ["one_sided_down"] if task.d == 0.0 else []
    if task.a is not None:
        names = ["two_sided_up"] + (["two_sided_down"] if task.d == 0.0 else []) + names + ["one_sided_up"]
    if not names:
        raise DomainError("exit task needs an upper barrier or d = 0")
    return names


def task_exit(cfg: RunConfig, model, profile, method: Optional[str] = None) -> Table:
    n, t = cfg.numeric, cfg.task
    method = method or t.method
    names = _exit_names(t)
    rows = []
    if method == "analytic":
        x_max = max(n.x_max, (t.a or 0.0) + 1.0)
        mach = machinery(model, profile, n.q, t.d, n.h, x_max)
        for x in t.x:
            q = ExitQuery(x, t.d, t.a, n.q)
            rows.append([x] + [_EXITS[k](q, mach) for k in names])
        return Table(["x"] + names, rows, {"method": "analytic"})
    header = ["x"]
    for k in names:
        header += [k, f"{k}_se", f"{k}_budget"]
    for x in t.x:
        ExitQuery(x, t.d, t.a, n.q)
        est = mc_exits(model, profile, x, t.d, t.a, n.q, n.n_paths, _path_config(cfg))
        row = [x]
        for k in names:
            row += [est[k].mean, est[k].std_error, est[k].truncation_budget]
        rows.append(row)
    return Table(header, rows, {"method": "mc", "n_paths": n.n_paths, "seed": n.seed})


def _resolvent_query(cfg: RunConfig, x: float) -> ExitQuery:
    t, n = cfg.task, cfg.numeric
    d = t.d if t.variant == "two_barrier" else (0.0 if t.variant == "lower_only" else None)
    a = t.a if t.variant in ("two_barrier", "upper_only") else None
    if t.variant in ("two_barrier", "upper_only") and a is None:
        raise DomainError("variant needs an upper barrier", variant=t.variant)
    return ExitQuery(x, d, a, n.q)


def task_resolvent(cfg: RunConfig, model, profile, method: Optional[str] = None) -> Table:
    t, n = cfg.task, cfg.numeric
    method = method or t.method
    x = t.x[0]
    query = _resolvent_query(cfg, x)
    lo, hi = t.window if t.window is not None else (None, None)
    if method == "mc":
        if t.window is None:
            raise DomainError("Monte Carlo occupation needs a window")
        est = mc_occupation(model, profile, x, t.variant, t.window, n.q, n.n_paths, _path_config(cfg), d=query.d, a=query.a)
        return Table(["x", "mass", "mass_se", "mass_budget"], [[x, est.mean, est.std_error, est.truncation_budget]], {"method": "mc"})
    x_max = max(n.x_max, (t.a or 0.0) + 1.0)
    mach = machinery(model, profile, n.q, query.d if query.d is not None else 0.0, n.h, x_max)
    mass, last = resolvent_mass(query, t.variant, mach, lo, hi)
    y_lo = lo if lo is not None else (query.d if query.d is not None else min(x, 0.0) - 4.0)
    y_hi = hi if hi is not None else (query.a if query.a is not None else min(x_max, max(x, 0.0) + 8.0))
    dens = resolvent(query, t.variant, mach, np.linspace(y_lo, y_hi, 201))
    rows = [[float(y), float(v)] for y, v in zip(dens.y, dens.density)]
    return Table(["y", "density"], rows, {"method": "analytic", "mass": mass, "last_widening": last, "x": x})


def task_ruin(cfg: RunConfig, model, profile, method: Optional[str] = None) -> Table:
    n, t = cfg.numeric, cfg.task
    method = method or t.method
    rows = []
    if method == "analytic":
        for x in t.x:
            r = ruin_report(x, model, profile, n.h)
            rows.append([x, r.value, r.method, r.error_budget])
        return Table(["x", "ruin", "method", "ruin_budget"], rows, {"method": "analytic"})
    for x in t.x:
        est = mc_ruin(model, profile, x, n.n_paths, _path_config(cfg))
        rows.append([x, est.mean, est.std_error, est.truncation_budget])
    return Table(["x", "ruin", "ruin_se", "ruin_budget"], rows, {"method": "mc", "n_paths": n.n_paths})


def task_simulate(cfg: RunConfig, model, profile) -> Table:
    n, t = cfg.numeric, cfg.task
    pc = _path_config(cfg)
    x0 = t.x[0]
    rows = []
    for p in range(max(1, cfg.output.path_dump)):
        rec = simulate_path(model, profile, x0, pc, stream=p)
        rows += [[p, float(a), float(b)] for a, b in zip(rec.t, rec.u)]
    final = mc_terminal(model, profile, x0, n.n_paths, pc)
    summary = {
        "terminal_mean": float(np.mean(final)),
        "terminal_se": float(np.std(final, ddof=1) / np.sqrt(len(final))) if len(final) > 1 else 0.0,
        "n_paths": n.n_paths,
        "horizon": n.horizon,
    }
    return Table(["path", "t", "u"], rows, summary)


def task_converge(cfg: RunConfig, model, profile) -> Table:
    n, t = cfg.numeric, cfg.task
    rep = convergence_report(model, profile, n.q, t.d, t.n_list, n.h, n.x_max)
    rows = [[r["n"], r["sup_error"], r["grid_h"]] for r in rep]
    return Table(["n", "sup_error", "grid_h"], rows)


TASKS: Dict[str, Callable] = {
    "scale": task_scale,
    "exit": task_exit,
    "resolvent": task_resolvent,
    "ruin": task_ruin,
    "simulate": task_simulate,
    "converge": task_converge,
}


# ---------------------------------------------------------------- comparison


def _compare_scale(cfg: RunConfig, model, profile) -> Table:
    n, t = cfg.numeric, cfg.task
    if not isinstance(profile, StepProfile):
        raise DomainError("recursion needs a step profile")
    rec_w = build_w(model, profile, n.q, t.d, n.h, n.x_max)
    vol_w = solve_w_prime(model, profile, n.q, t.d, n.h, n.x_max)
    tol = n.tol if n.tol is not None else max(1e-6, 5 * n.h**2 * float(np.max(np.abs(rec_w.values))))
    rows = []
    for i in _rows_every(rec_w, n.stride):
        a, b = float(rec_w.values[i]), float(vol_w.values[i])
        rows.append([float(rec_w.x[i]), "w", a, b, abs(a - b), tol, abs(a - b) <= tol])
    if t.d == 0.0:
        rec_z = build_z(model, profile, n.q, n.h, n.x_max)
        vol_z = solve_z_prime(model, profile, n.q, n.h, n.x_max)
        for i in _rows_every(rec_z, n.stride):
            a, b = float(rec_z.values[i]), float(vol_z.values[i])
            rows.append([float(rec_z.x[i]), "z", a, b, abs(a - b), tol, abs(a - b) <= tol])
    return Table(["x", "quantity", "recursion", "volterra", "discrepancy", "tolerance", "ok"], rows)


def _compare_mc(cfg: RunConfig, model, profile, task: Callable) -> Table:
    an = task(cfg, model, profile, method="analytic")
    mc = task(cfg, model, profile, method="mc")
    extra = cfg.numeric.tol or 0.0
    rows = []
    if cfg.task.kind == "resolvent":
        mass, se, budget = mc.rows[0][1:4]
        value = an.summary["mass"]
        tol = 3.0 * se + budget + extra
        rows.append([cfg.task.x[0], "mass", value, mass, abs(value - mass), tol, abs(value - mass) <= tol])
    else:
        for arow, mrow in zip(an.rows, mc.rows):
            x = arow[0]
            for j, name in enumerate(an.header[1:], start=1):
                if name == "method" or name.endswith("budget"):
                    continue
                k = mc.header.index(name)
                value, est = float(arow[j]), float(mrow[k])
                tol = 3.0 * float(mrow[k + 1]) + float(mrow[k + 2]) + extra
                rows.append([x, name, value, est, abs(value - est), tol, abs(value - est) <= tol])
    return Table(["x", "quantity", "analytic", "mc", "discrepancy", "tolerance", "ok"], rows)


def compare(cfg: RunConfig, model, profile) -> Table:
    pair = tuple(cfg.task.compare or ())
    if cfg.task.kind == "scale" and set(pair) == {"recursion", "volterra"}:
        table = _compare_scale(cfg, model, profile)
    elif cfg.task.kind in ("exit", "ruin", "resolvent") and set(pair) == {"analytic", "mc"}:
        table = _compare_mc(cfg, model, profile, TASKS[cfg.task.kind])
    else:
        raise InvalidConfig("unsupported comparison", task=cfg.task.kind, methods=list(pair))
    failed = [r for r in table.rows if not r[-1]]
    table.summary = {"points": len(table.rows), "failed": len(failed), "failed_x": [r[0] for r in failed]}
    return table


# ---------------------------------------------------------------- output


def _provenance(cfg: RunConfig) -> Dict[str, str]:
    return {"version": __version__, "config_hash": cfg.digest()}


def write_csv(path: Path, table: Table, cfg: RunConfig) -> None:
    prov = _provenance(cfg)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# refracted_levy {prov['version']} config sha256:{prov['config_hash']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, table: Table, cfg: RunConfig, name: str) -> None:
    doc = {
        **_provenance(cfg),
        "task": name,
        "summary": table.summary,
        "columns": table.header,
        "rows": [[v.item() if isinstance(v, np.generic) else v for v in r] for r in table.rows],
    }
    path.write_text(json.dumps(doc, indent=2, default=float) + "\n", encoding="utf-8")


def emit(out: Path, name: str, table: Table, cfg: RunConfig, formats: Sequence[str], plots: bool) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    (out / "config.json").write_text(
        json.dumps({**_provenance(cfg), "config": cfg.canonical()}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if "csv" in formats:
        written.append(out / f"{name}.csv")
        write_csv(written[-1], table, cfg)
    if "json" in formats:
        written.append(out / f"{name}.json")
        write_json(written[-1], table, cfg, name)
    if plots:
        from .report import render

        kind = "compare" if name == "compare" else cfg.task.kind
        numeric = table
        if kind == "compare":
            numeric = Table(table.header, [r for r in table.rows if isinstance(r[0], float)])
        written.append(render(kind, numeric.header, numeric.rows, out / f"{name}.png", title=name))
    return written


def _error(out: Path, exc: LevyError, quiet: bool) -> int:
    record = {**exc.as_record(), "exit_code": exc.exit_code, "version": __version__}
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(record, indent=2, default=str) + "\n", encoding="utf-8")
    except OSError:
        pass
    if not quiet:
        print(json.dumps(record, default=str), file=sys.stderr)
    return exc.exit_code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refracted-levy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "compare"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=Path("results"))
        s.add_argument("--format", choices=("csv", "json"))
        s.add_argument("--seed-override", type=int)
        s.add_argument("--quiet", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            if not 0 <= args.seed_override < 2**64:
                raise InvalidConfig("seed must fit in 64 bits", seed=args.seed_override)
            cfg = cfg.model_copy(update={"numeric": cfg.numeric.model_copy(update={"seed": args.seed_override})})
        model, profile = cfg.objects()
        formats = [args.format] if args.format else list(cfg.output.formats)
        with np.errstate(over="ignore", invalid="ignore"):
            if args.command == "compare":
                table = compare(cfg, model, profile)
                name = "compare"
            else:
                table = TASKS[cfg.task.kind](cfg, model, profile)
                name = cfg.task.kind
        paths = emit(args.out, name, table, cfg, formats, cfg.output.plots)
    except LevyError as exc:
        return _error(args.out, exc, args.quiet)
    for p in paths:
        log.info("wrote %s", p)
    if name == "compare" and table.summary["failed"]:
        log.warning("%d of %d points outside tolerance", table.summary["failed"], table.summary["points"])
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
