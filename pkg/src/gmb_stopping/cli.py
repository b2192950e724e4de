"""Command-line front end.

    gmb-stopping solve    --preset figure1_x0 --out runs/fig1
    gmb-stopping validate --config my.ini --out runs/check
    gmb-stopping render   runs/fig1
    gmb-stopping simulate --preset bm_dirac --out runs/paths
    gmb-stopping volterra --preset bm_dirac --out runs/shepp

Exit codes: 0 success, 1 solver failure or failed check, 2 configuration or
input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config, serialize
from .exceptions import ConfigurationError, ConvergenceError, ImpossibleStateError, PreconditionError
from .mc_solver import extract_boundary, solve
from .pathsim import simulate
from .render import write_heatmap
from .timechange import build
from .validation import run_all, volterra_for

log = logging.getLogger("gmb_stopping")

SOLVER_ERRORS = (ConvergenceError, ImpossibleStateError, PreconditionError, FloatingPointError)


class InputError(Exception):
    pass


def _load(args):
    if args.preset and args.config:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.preset:
        if args.preset not in config.PRESETS:
            raise ConfigurationError(f"unknown preset {args.preset!r}; choose from {sorted(config.PRESETS)}")
        text, base = config.PRESETS[args.preset], "."
    elif args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        base = path.parent
    else:
        raise ConfigurationError("one of --config or --preset is required")
    values = config.parse_text(text, base)
    over = {}
    if args.seed is not None:
        over["grid"] = {"seed": args.seed}
    if args.workers is not None:
        over["solver"] = {"workers": args.workers}
    if over:
        values = config.with_overrides(values, **over)
    cfg = config.build_config(values)
    out = Path(args.out or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(text)
    return cfg, out


def _meta(cfg, extra=None):
    meta = {
        "version": __version__,
        "model": cfg.model.describe(),
        "prior": cfg.prior.describe(),
        "grid": cfg.grid.describe(),
        "seed": int(cfg.grid.seed),
        "config": cfg.values,
    }
    meta.update(cfg.notes)
    if extra:
        meta.update(extra)
    return meta


def _write_volterra(out, sol, prefix=""):
    serialize.write_volterra_boundary(out / f"{prefix}boundary.csv", sol)
    serialize.write_convergence_log(out / "convergence.log", sol)
    return {
        "iterations": sol.iterations,
        "residual": sol.residual,
        "terminal_value": sol.terminal_value,
        "case": sol.case,
    }


def _volterra(cfg):
    s = cfg.solver
    return volterra_for(cfg.model, cfg.prior, s["volterra_points"], s["tol"], s["max_iter"], s["damping"])


def cmd_solve(args):
    cfg, out = _load(args)
    method = cfg.solver["method"]
    extra = {}
    if method in ("mc", "both"):
        res = solve(
            cfg.model,
            cfg.prior,
            cfg.grid,
            workers=cfg.solver["workers"],
            common_random_numbers=cfg.solver["common_random_numbers"],
            variance_cap=cfg.solver.get("variance_cap"),
        )
        g = res.grid
        serialize.write_matrix(out / "V.csv", g.t_grid, g.x_grid, res.V)
        serialize.write_matrix(out / "D.csv", g.t_grid, g.x_grid, res.D)
        b = extract_boundary(res)
        serialize.write_boundary(out / "boundary.csv", b)
        extra.update(res.meta)
        extra["single_boundary"] = b.single_boundary
        extra["boundary_side"] = b.side
        extra["V00"] = res.value_at(0.0, cfg.model.x0)
        log.info("solved %dx%d grid in %.1fs", g.N, g.M, res.meta["runtime_seconds"])
    if method in ("volterra", "both"):
        sol = _volterra(cfg)
        if sol is None:
            raise ConfigurationError(f"no integral equation for {cfg.prior.kind} priors")
        extra["volterra"] = _write_volterra(out, sol, "volterra_" if method == "both" else "")
    if cfg.output["dump_paths"]:
        batch = simulate(cfg.model, cfg.prior, cfg.grid.t_grid, cfg.output["n_paths"], cfg.grid.seed)
        batch.to_csv(out / "paths.csv")
    if cfg.output["dump_timechange"]:
        build(cfg.model).to_csv(out / "timechange.csv")
    serialize.write_json(out / "meta.json", _meta(cfg, extra))
    return 0


def cmd_validate(args):
    cfg, out = _load(args)
    v = cfg.values["validate"]
    start = time.perf_counter()
    report, res = run_all(
        cfg,
        partner=cfg.partner,
        n_paths=v["n_paths"],
        workers=cfg.solver["workers"],
        log=log.info,
        cross_tol=v["cross_tolerance"],
    )
    report["runtime_seconds"] = time.perf_counter() - start
    report["config"] = cfg.values
    serialize.write_json(out / "report.json", report)
    for name, chk in report["checks"].items():
        state = "skip" if not chk.get("applicable", True) else ("PASS" if chk["passed"] else "FAIL")
        print(f"{state:4s} {name}")
    if report["failed"]:
        print("failed checks: " + ", ".join(report["failed"]), file=sys.stderr)
        for name in report["failed"]:
            cells = report["checks"][name].get("violating_cells") or []
            for c in cells[:10]:
                print(f"  {name}: cell t={c['t']:.6g} x={c['x']:.6g}", file=sys.stderr)
        return 1
    return 0


def cmd_render(args):
    d = Path(args.directory)
    path = d / "D.csv"
    if not path.exists():
        raise InputError(f"{path} not found")
    t, x, D = serialize.read_matrix(path)
    write_heatmap(d / "heatmap.svg", t, x, D.astype(bool), title=args.title)
    return 0


def cmd_simulate(args):
    cfg, out = _load(args)
    n = args.n_paths or cfg.output["n_paths"]
    times = cfg.grid.t_grid
    batch = simulate(cfg.model, cfg.prior, times, n, cfg.grid.seed)
    batch.to_csv(out / "paths.csv")
    term = batch.paths[:, -1]
    serialize.write_json(
        out / "meta.json",
        _meta(cfg, {"n_paths": n, "terminal_mean": float(np.mean(term)), "terminal_var": float(np.var(term))}),
    )
    return 0


def cmd_volterra(args):
    cfg, out = _load(args)
    sol = _volterra(cfg)
    if sol is None:
        raise ConfigurationError(f"no integral equation for {cfg.prior.kind} priors")
    info = _write_volterra(out, sol)
    serialize.write_json(out / "meta.json", _meta(cfg, {"volterra": info}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gmb-stopping", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="configuration file")
        sp.add_argument("--preset", help=f"built-in configuration ({', '.join(config.PRESETS)})")
        sp.add_argument("--out", help="output directory (default: [output] directory)")
        sp.add_argument("--seed", type=int, help="override [grid] seed")
        sp.add_argument("--workers", type=int, help="override [solver] workers")

    for name, fn, help_ in (
        ("solve", cmd_solve, "backward-induction solve; writes V.csv, D.csv, boundary.csv, meta.json"),
        ("validate", cmd_validate, "run the invariant checks; writes report.json"),
        ("simulate", cmd_simulate, "simulate conditioned paths; writes paths.csv"),
        ("volterra", cmd_volterra, "solve the integral equation; writes boundary.csv, convergence.log"),
    ):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        if name == "simulate":
            sp.add_argument("--n-paths", type=int, dest="n_paths")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("render", help="draw heatmap.svg from a result directory")
    sp.add_argument("directory")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigurationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
