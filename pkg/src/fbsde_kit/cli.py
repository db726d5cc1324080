"""Batch front-end: JSON experiment configs in, CSV tables and JSON reports out.

Exit statuses: 0 success, 1 configuration error, 2 condition-check (or
Nash-deviation) failure, 3 solver non-convergence.  Every failure is
also written to ``<out-dir>/error.json`` with a machine-readable code.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import applications, conditions, global_solver
from .errors import (
    ConfigError,
    DeltaSelectionError,
    EnvelopeOverflowError,
    ExpressionError,
    FBSDEKitError,
    FixedPointError,
    PicardNonConvergenceError,
)
from .expressions import compile_expression
from .local_solver import GridSpec
from .problem import FBSDEProblem

_NONCONVERGENCE = (
    PicardNonConvergenceError,
    DeltaSelectionError,
    FixedPointError,
    EnvelopeOverflowError,
)


def parse_expression(text: str, n: int = 1, d: int = 1, allowed=None):
    """Compile an arithmetic expression into a handle ``f(t, x, y, z)``.

    ``y`` is indexed as y1..yn, ``z`` as z<i><k> with 1-based row/column;
    the handle broadcasts over the trailing axes of ``x``.
    """
    expr = compile_expression(text, allowed=allowed)

    def handle(t, x, y=None, z=None):
        env = {"t": t, "x": np.asarray(x, dtype=float)}
        if y is not None:
            y = np.asarray(y, dtype=float)
            for i in range(n):
                env[f"y{i + 1}"] = y[..., i]
        if z is not None:
            z = np.asarray(z, dtype=float)
            for i in range(n):
                for k in range(d):
                    env[f"z{i + 1}{k + 1}"] = z[..., i, k] if z.ndim >= 2 else z[..., k]
        out = expr.evaluate(env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(env["x"])).copy()

    handle.expression = expr
    return handle


def _vars_y(n):
    return [f"y{i + 1}" for i in range(n)]


def _vars_z_row(i, d):
    return [f"z{i + 1}{k + 1}" for k in range(d)]


def _build_custom_problem(cfg: dict) -> FBSDEProblem:
    try:
        n = int(cfg["n"])
        d = int(cfg["d"])
        T = float(cfg["T"])
        x0 = float(cfg["x0"])
        K = float(cfg["K"])
        b_src = cfg["b"]
        sigma_src = cfg["sigma"]
        f_src = cfg["f"]
        h_src = cfg["h"]
    except KeyError as exc:
        raise ConfigError(f"custom problem is missing field {exc.args[0]!r}") from exc
    growth = cfg.get("growth_class", "lipschitz")
    if len(sigma_src) != d:
        raise ConfigError("sigma must list one expression per Brownian component")
    if len(f_src) != n or len(h_src) != n:
        raise ConfigError("f and h must list one expression per backward component")

    b_expr = parse_expression(b_src, n, d, allowed=["t", "x"] + _vars_y(n))
    sig_exprs = [compile_expression(s, allowed=["t"]) for s in sigma_src]
    f_handles = [
        parse_expression(src, n, d, allowed=["t", "x"] + _vars_y(n) + _vars_z_row(i, d))
        for i, src in enumerate(f_src)
    ]
    h_exprs = [compile_expression(s, allowed=["x"]) for s in h_src]

    def sigma(t):
        return np.array([float(e.evaluate({"t": t})) for e in sig_exprs])

    def make_row(i):
        fh = f_handles[i]

        def row(t, x, y, z_row):
            z_full = np.zeros(np.shape(z_row)[:-1] + (n, d))
            z_full[..., i, :] = z_row
            return fh(t, x, y, z_full)

        return row

    def h(x):
        x = np.asarray(x, dtype=float)
        cols = [
            np.broadcast_to(np.asarray(e.evaluate({"x": x}), dtype=float), x.shape)
            for e in h_exprs
        ]
        return np.stack(cols, axis=-1)

    return FBSDEProblem(
        n=n, d=d, T=T, x0=x0,
        b=lambda t, x, y: b_expr(t, x, y),
        sigma=sigma, f=[make_row(i) for i in range(n)], h=h,
        K=K, growth_class=growth, name=cfg.get("name", "custom"),
    )


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    if cfg.get("command") not in ("check", "solve", "verify-nash", "convergence"):
        raise ConfigError(
            "command must be one of check, solve, verify-nash, convergence"
        )
    if "problem" not in cfg or not isinstance(cfg["problem"], dict):
        raise ConfigError("config requires a 'problem' object")
    return cfg


def build_problem(cfg: dict) -> FBSDEProblem:
    prob = cfg["problem"]
    if "builtin" in prob:
        name = prob["builtin"]
        if name not in applications.BUILTIN_NAMES:
            raise ConfigError(
                f"unknown builtin {name!r}; choose from {applications.BUILTIN_NAMES}"
            )
        try:
            return applications.build_builtin(name, prob.get("params"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid parameters for builtin {name!r}: {exc}") from exc
    if "custom" in prob:
        try:
            return _build_custom_problem(prob["custom"])
        except ExpressionError as exc:
            raise ConfigError(f"bad coefficient expression: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid custom problem: {exc}") from exc
    raise ConfigError("problem must contain either 'builtin' or 'custom'")


def _grid_kwargs(cfg: dict) -> dict:
    grid = cfg.get("grid", {})
    kw = {}
    if "nx" in grid:
        kw["nx"] = int(grid["nx"])
    if "nt_total" in grid:
        kw["nt_total"] = int(grid["nt_total"])
    if "quad" in grid:
        kw["quad"] = int(grid["quad"])
    return kw


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_check(p: FBSDEProblem, cfg: dict, out: Path, quiet: bool) -> int:
    seed = int(cfg.get("seed", 0))
    n_samples = int(cfg.get("n_samples", 10_000))
    reports = conditions.check_structural(p, N=n_samples, seed=seed)
    reports += conditions.check_monotonicity(p, N=n_samples, seed=seed)
    payload = {"reports": [r.to_dict() for r in reports]}
    payload["pass"] = all(r.passed for r in reports)
    _write_json(out / "condition_report.json", payload)
    if not quiet:
        for r in reports:
            print(f"{r.condition}: {r.verdict}")
    return 0 if payload["pass"] else 2


def _solve(p: FBSDEProblem, cfg: dict):
    field, diag = global_solver.build_decoupling_field(p, **_grid_kwargs(cfg))
    return field, diag


def _run_solve(p: FBSDEProblem, cfg: dict, out: Path, quiet: bool) -> int:
    seed = int(cfg.get("seed", 0))
    field, diag = _solve(p, cfg)
    sandwich = global_solver.verify_sandwich(field, field.env)
    paths, sim_diag = global_solver.simulate_forward(
        p, field, n_paths=int(cfg.get("n_paths", 100)), seed=seed
    )
    diag = global_solver.merge_diagnostics(diag, sim_diag)
    global_solver.export_field_csv(field, out / "field.csv")
    global_solver.export_paths_csv(paths, out / "paths.csv")
    global_solver.export_diagnostics_json(diag, out / "diagnostics.json")
    _write_json(out / "sandwich.json", sandwich)
    if not quiet:
        y0 = field.value(0.0, np.array([p.x0]))[0]
        print(f"u(0, x0) = {np.array2string(y0, precision=10)}")
        print(f"sandwich margin = {sandwich['margin']:.3e} (pass={sandwich['pass']})")
    return 0


def _run_verify_nash(p: FBSDEProblem, cfg: dict, out: Path, quiet: bool) -> int:
    if p.meta.get("game") is None:
        raise ConfigError("verify-nash requires problem.builtin == 'lq_game'")
    seed = int(cfg.get("seed", 0))
    field, _ = _solve(p, cfg)
    report = applications.verify_nash(
        p, field,
        n_deviations=int(cfg.get("n_deviations", 10)),
        n_paths=int(cfg.get("n_paths", 10_000)),
        seed=seed,
        eps_levels=tuple(cfg.get("eps_levels", (0.05, 0.1, 0.2))),
    )
    _write_json(out / "nash_report.json", report)
    if not quiet:
        print(f"nash deviation test: {'pass' if report['pass'] else 'FAIL'}")
    return 0 if report["pass"] else 2


def _run_convergence(p: FBSDEProblem, cfg: dict, out: Path, quiet: bool) -> int:
    base = cfg.get("grid", {})
    nx0 = int(base.get("nx", 101))
    nt0 = int(base.get("nt_total", 50))
    quad = int(base.get("quad", 7))
    rows = []
    for level in range(3):
        nx = (nx0 - 1) * (2 ** level) + 1
        nt = nt0 * (2 ** level)
        field, _ = global_solver.build_decoupling_field(
            p, nx=nx, nt_total=nt, quad=quad
        )
        y0 = field.value(0.0, np.array([p.x0]))[0]
        rows.append((nx, nt, y0))
    orders = []
    for i in range(p.n):
        e1 = abs(rows[1][2][i] - rows[0][2][i])
        e2 = abs(rows[2][2][i] - rows[1][2][i])
        orders.append(float(np.log2(e1 / e2)) if e1 > 0 and e2 > 0 else float("nan"))
    fmt = global_solver.FLOAT_FMT
    with open(out / "convergence.csv", "w") as fh:
        fh.write("level,nx,nt," + ",".join(f"u{i + 1}" for i in range(p.n)) + "\n")
        for lev, (nx, nt, y0) in enumerate(rows):
            fh.write(
                f"{lev},{nx},{nt}," + ",".join(fmt.format(v) for v in y0) + "\n"
            )
    _write_json(
        out / "convergence.json",
        {
            "levels": [
                {"nx": nx, "nt": nt, "u0": [float(v) for v in y0]}
                for nx, nt, y0 in rows
            ],
            "observed_orders": orders,
        },
    )
    if not quiet:
        for i, o in enumerate(orders):
            print(f"component {i + 1}: observed order {o:.2f}")
    return 0


def run(cfg: dict, out_dir=".", quiet: bool = False) -> int:
    """Execute a parsed experiment config; returns the exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = build_problem(cfg)
    command = cfg["command"]
    if command == "check":
        return _run_check(p, cfg, out, quiet)
    if command == "solve":
        return _run_solve(p, cfg, out, quiet)
    if command == "verify-nash":
        return _run_verify_nash(p, cfg, out, quiet)
    return _run_convergence(p, cfg, out, quiet)


def _error_payload(exc: Exception, code: str) -> dict:
    return {"error": {"code": code, "type": type(exc).__name__, "message": str(exc)}}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbsde-kit",
        description="Check, solve, and verify coupled forward-backward systems "
        "described by a JSON experiment config.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker thread cap (fallback: FBSDE_KIT_THREADS)",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        env_threads = os.environ.get("FBSDE_KIT_THREADS")
        if env_threads is not None:
            try:
                threads = int(env_threads)
            except ValueError:
                print("error: FBSDE_KIT_THREADS must be an integer", file=sys.stderr)
                return 1
    if threads is not None:
        if threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    out = Path(args.out_dir)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return run(cfg, out_dir=out, quiet=args.quiet)
    except ConfigError as exc:
        _emit_error(out, exc, "config_error", args.quiet)
        return 1
    except _NONCONVERGENCE as exc:
        _emit_error(out, exc, "non_convergence", args.quiet)
        return 3
    except FBSDEKitError as exc:
        _emit_error(out, exc, "runtime_error", args.quiet)
        return 1


def _emit_error(out: Path, exc: Exception, code: str, quiet: bool):
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", _error_payload(exc, code))
    except OSError:
        pass
    if not quiet:
        print(f"error [{code}]: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
