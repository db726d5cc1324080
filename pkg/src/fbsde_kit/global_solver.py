"""Global decoupling field by backward stitching, path simulation, diagnostics.

The field over [0, T] is assembled from sub-interval solves of length at
most delta: the last sub-interval uses the terminal condition h, each
earlier one uses the next slice's initial time layer as its terminal
field, so junctions match bitwise.  Forward paths are then simulated by
Euler-Maruyama with Y read from the field and Z from the stored
projection values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bounds import (
    LipschitzEnvelope,
    Partition,
    integrate_envelope,
    make_partition,
    select_delta,
)
from .errors import PicardNonConvergenceError
from .local_solver import (
    FieldSlice,
    GridSpec,
    clamped_interp,
    interpolate_field,
    picard_solve_subinterval,
)
from .problem import FBSDEProblem, SolutionPath, diffusion, drift, terminal
from .problem import driver_row_from_matrix

FLOAT_FMT = "{:.17g}"


@dataclass
class DecouplingField:
    """Stitched decoupling field over [0, T] on a shared space grid."""

    partition: Partition
    slices: List[FieldSlice]
    grid: GridSpec
    env: LipschitzEnvelope
    times: np.ndarray        # (NT+1,) concatenated fine grid
    u: np.ndarray            # (NT+1, nx, n)
    v: np.ndarray            # (NT+1, nx, n, d)

    @property
    def x_nodes(self) -> np.ndarray:
        return self.grid.x_nodes

    def value(self, t: float, x):
        return interpolate_field(self, t, x, env=self.env)


@dataclass
class Diagnostics:
    delta: float = math.nan
    partition_size: int = 0
    picard_passes: list = field(default_factory=list)
    sandwich_margin: float = math.nan
    bmo_surrogate: float = math.nan
    growth_violations: int = 0
    max_backward_residual: float = math.nan
    mean_backward_residual: float = math.nan
    max_abs_y: float = math.nan
    escaped_paths: int = 0

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "partition_size": self.partition_size,
            "picard_passes": list(self.picard_passes),
            "sandwich_margin": self.sandwich_margin,
            "bmo_surrogate": self.bmo_surrogate,
            "growth_violations": self.growth_violations,
            "max_backward_residual": self.max_backward_residual,
            "mean_backward_residual": self.mean_backward_residual,
            "max_abs_y": self.max_abs_y,
            "escaped_paths": self.escaped_paths,
        }


def _sigma_sq_integral(p: FBSDEProblem, samples: int = 101) -> float:
    ts = np.linspace(0.0, p.T, samples)
    y0 = terminal(p, np.asarray(p.x0))
    vals = []
    for t in ts:
        s = diffusion(p, t, p.x0, y0)
        vals.append(float(np.sum(np.atleast_1d(s) ** 2)))
    return float(np.trapezoid(vals, ts))


def default_grid(
    p: FBSDEProblem,
    env: LipschitzEnvelope,
    nx: int = 401,
    nt_per_subinterval: int = 100,
    quad: int = 7,
) -> GridSpec:
    """Conservative grid range from the linear-growth bound on the drift
    plus three standard deviations of accumulated diffusion mass."""
    C = env.max
    spread = max(3.0 * math.sqrt(max(_sigma_sq_integral(p), 0.0)), 1.0)
    R = (1.0 + abs(p.x0) + C) * math.exp(p.K * p.T) * spread
    return GridSpec(p.x0 - R, p.x0 + R, nx, nt_per_subinterval, quad)


def contraction_probe(p: FBSDEProblem, grid: GridSpec, env: LipschitzEnvelope):
    """Probe used by delta selection: a cheap local solve on [T-delta, T]."""
    probe_grid = GridSpec(
        grid.x_min, grid.x_max,
        min(grid.nx, 201),
        max(8, min(grid.nt_per_subinterval, 32)),
        grid.quad,
    )

    def probe(delta: float, cap: float) -> float:
        sl = picard_solve_subinterval(
            p, lambda x: terminal(p, x), p.T - delta, p.T, probe_grid, env,
        )
        if not sl.contraction_ratios:
            return 0.0
        return max(sl.contraction_ratios[-3:])

    return probe


def build_decoupling_field(
    p: FBSDEProblem,
    grid: Optional[GridSpec] = None,
    *,
    nx: int = 401,
    nt_total: Optional[int] = None,
    quad: int = 7,
    envelope_steps: int = 2048,
):
    """Assemble the decoupling field over [0, T].

    When ``grid`` is None a conservative default range is computed from
    the envelope.  ``nt_total`` distributes a total backward-step budget
    across the partition; otherwise each sub-interval uses
    ``grid.nt_per_subinterval`` steps.  Returns (field, diagnostics).
    """
    env = integrate_envelope(p.K, p.n, p.T, steps=envelope_steps)
    if grid is None:
        grid = default_grid(p, env, nx=nx, quad=quad)
    delta = select_delta(p, env, contraction_probe(p, grid, env))
    partition = make_partition(p.T, delta)
    intervals = partition.intervals
    m = len(intervals)
    if nt_total is not None:
        per = max(1, int(math.ceil(nt_total / m)))
    else:
        per = grid.nt_per_subinterval
    sub_grid = GridSpec(grid.x_min, grid.x_max, grid.nx, per, grid.quad)

    diag = Diagnostics(delta=delta, partition_size=m)
    slices: List[FieldSlice] = []
    terminal_fn = lambda x: terminal(p, x)  # noqa: E731
    next_layer = None
    for (s, e) in reversed(intervals):
        if next_layer is None:
            term = terminal_fn
        else:
            layer = next_layer

            def term(xq, layer=layer):
                return clamped_interp(xq, sub_grid.x_nodes, layer, None, None)

        try:
            sl = picard_solve_subinterval(p, term, s, e, sub_grid, env)
            halves = [sl]
        except PicardNonConvergenceError:
            # one-time halving retry: split the failing sub-interval once
            mid = 0.5 * (s + e)
            half_grid = GridSpec(
                sub_grid.x_min, sub_grid.x_max, sub_grid.nx,
                max(1, per // 2), sub_grid.quad,
            )
            right = picard_solve_subinterval(p, term, mid, e, half_grid, env)

            def term_mid(xq, layer=right.u[0]):
                return clamped_interp(xq, half_grid.x_nodes, layer, None, None)

            left = picard_solve_subinterval(p, term_mid, s, mid, half_grid, env)
            halves = [right, left]
        for sl in halves:
            diag.picard_passes.append(sl.picard_passes)
            diag.growth_violations += sl.growth_violations
            slices.append(sl)
        next_layer = slices[-1].u[0]
    slices.reverse()

    # concatenate fine grid (drop duplicated junction layers)
    times = [slices[0].times]
    us = [slices[0].u]
    vs = [slices[0].v]
    for sl in slices[1:]:
        times.append(sl.times[1:])
        us.append(sl.u[1:])
        vs.append(sl.v[1:])
    field_obj = DecouplingField(
        partition=partition, slices=slices, grid=sub_grid, env=env,
        times=np.concatenate(times), u=np.concatenate(us), v=np.concatenate(vs),
    )
    report = verify_sandwich(field_obj, env)
    diag.sandwich_margin = report["margin"]
    diag.bmo_surrogate = bmo_surrogate(field_obj)
    return field_obj, diag


def verify_sandwich(field: DecouplingField, env: LipschitzEnvelope, eps_slope: float = 1e-2) -> dict:
    """Check that all spatial difference quotients of the field lie in
    [-eps, ybar_t + eps]; returns the worst witnesses and overall margin."""
    x = field.x_nodes
    dx = np.diff(x)
    worst_low = np.inf
    worst_high = np.inf  # min over (ybar + eps - slope)
    wit_low = wit_high = None
    for j, t in enumerate(field.times):
        slopes = (field.u[j][1:] - field.u[j][:-1]) / dx[:, None]
        ybar = env.value(float(t))
        low = slopes.min() + eps_slope
        if low < worst_low:
            worst_low = low
            k = int(np.argmin(slopes)) // field.u.shape[2]
            wit_low = {"t": float(t), "x": float(x[k]), "slope": float(slopes.min())}
        gap = (ybar[None, :] + eps_slope - slopes).min()
        if gap < worst_high:
            worst_high = gap
            k = int(np.argmin(ybar[None, :] + eps_slope - slopes)) // field.u.shape[2]
            wit_high = {"t": float(t), "x": float(x[k]), "slope": float(slopes.max())}
    margin = float(min(worst_low, worst_high))
    return {
        "pass": bool(margin >= 0.0),
        "margin": margin,
        "eps_slope": eps_slope,
        "lower_witness": wit_low,
        "upper_witness": wit_high,
    }


def bmo_surrogate(field: DecouplingField) -> float:
    """Grid surrogate of the BMO norm: max over start times of the
    grid-average remaining quadratic variation of Z.  Reported only."""
    dts = np.diff(field.times)
    zsq = np.einsum("txik,txik->tx", field.v, field.v)  # (NT+1, nx)
    contrib = zsq[:-1] * dts[:, None]
    tail = np.cumsum(contrib[::-1], axis=0)[::-1]       # (NT, nx)
    return float(tail.mean(axis=1).max(initial=0.0))


def simulate_forward(
    p: FBSDEProblem,
    field_obj: DecouplingField,
    n_paths: int,
    seed: int = 0,
):
    """Euler-Maruyama on the field's fine time grid; Y from the field,
    Z from the stored projection values.  Reproducible for a fixed seed."""
    times = field_obj.times
    x_nodes = field_obj.x_nodes
    NT = len(times) - 1
    n, d = p.n, p.d
    rng = np.random.default_rng(seed)
    dts = np.diff(times)
    dW = rng.standard_normal((n_paths, NT, d)) * np.sqrt(dts)[None, :, None]

    X = np.empty((n_paths, NT + 1))
    Y = np.empty((n_paths, NT + 1, n))
    Z = np.empty((n_paths, NT + 1, n, d))
    X[:, 0] = p.x0
    env = field_obj.env

    def read_layer(j, xq):
        lo, hi = 0.0, env.value(float(times[j]))
        u = clamped_interp(xq, x_nodes, field_obj.u[j], lo, hi)
        vflat = field_obj.v[j].reshape(len(x_nodes), n * d)
        v = clamped_interp(xq, x_nodes, vflat, None, None).reshape(xq.shape + (n, d))
        return u, v

    escaped = 0
    x_lo, x_hi = x_nodes[0], x_nodes[-1]
    for j in range(NT):
        Y[:, j], Z[:, j] = read_layer(j, X[:, j])
        if p.drift_uses_z:
            bval = drift(p, times[j], X[:, j], Y[:, j], Z[:, j, 0, :])
        else:
            bval = drift(p, times[j], X[:, j], Y[:, j])
        sig = diffusion(p, times[j], X[:, j], Y[:, j])
        if sig.ndim == 1:
            inc = dW[:, j] @ sig
        else:
            inc = np.einsum("pk,pk->p", dW[:, j], sig)
        X[:, j + 1] = X[:, j] + bval * dts[j] + inc
    Y[:, NT], Z[:, NT] = read_layer(NT, X[:, NT])
    escaped = int(np.sum(np.any((X < x_lo) | (X > x_hi), axis=1)))

    # backward residual r_j = Y_j - (Y_{j+1} + f dt - Z dW)
    res_max = 0.0
    res_sum = 0.0
    res_cnt = 0
    for j in range(NT):
        fval = np.stack(
            [
                driver_row_from_matrix(p, i, times[j], X[:, j], Y[:, j], Z[:, j])
                for i in range(1, n + 1)
            ],
            axis=-1,
        )
        zdw = np.einsum("pik,pk->pi", Z[:, j], dW[:, j])
        r = Y[:, j] - (Y[:, j + 1] + fval * dts[j] - zdw)
        res_max = max(res_max, float(np.abs(r).max()))
        res_sum += float(np.abs(r).sum())
        res_cnt += r.size

    diag = Diagnostics(
        max_backward_residual=res_max,
        mean_backward_residual=res_sum / max(res_cnt, 1),
        max_abs_y=float(np.abs(Y).max()),
        escaped_paths=escaped,
    )
    paths = [
        SolutionPath(times=times, X=X[k], Y=Y[k], Z=Z[k], dW=dW[k], seed=seed)
        for k in range(n_paths)
    ]
    return paths, diag


def export_field_csv(field_obj: DecouplingField, path) -> None:
    n = field_obj.u.shape[2]
    d = field_obj.v.shape[3]
    header = (
        ["t", "x"]
        + [f"u_{i + 1}" for i in range(n)]
        + [f"v_{i + 1}{k + 1}" for i in range(n) for k in range(d)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, t in enumerate(field_obj.times):
            for m, x in enumerate(field_obj.x_nodes):
                row = [FLOAT_FMT.format(t), FLOAT_FMT.format(x)]
                row += [FLOAT_FMT.format(v) for v in field_obj.u[j, m]]
                row += [FLOAT_FMT.format(v) for v in field_obj.v[j, m].ravel()]
                w.writerow(row)


def export_paths_csv(paths: List[SolutionPath], path) -> None:
    if not paths:
        raise ValueError("no paths to export")
    n = paths[0].Y.shape[1]
    d = paths[0].Z.shape[2]
    header = (
        ["path_id", "t", "X"]
        + [f"Y_{i + 1}" for i in range(n)]
        + [f"Z_{i + 1}{k + 1}" for i in range(n) for k in range(d)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for pid, sp in enumerate(paths):
            for j, t in enumerate(sp.times):
                row = [str(pid), FLOAT_FMT.format(t), FLOAT_FMT.format(sp.X[j])]
                row += [FLOAT_FMT.format(v) for v in sp.Y[j]]
                row += [FLOAT_FMT.format(v) for v in sp.Z[j].ravel()]
                w.writerow(row)


def export_diagnostics_json(diag: Diagnostics, path, extra: Optional[dict] = None) -> None:
    payload = diag.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def merge_diagnostics(build: Diagnostics, sim: Diagnostics) -> Diagnostics:
    out = Diagnostics(**{**build.to_dict()})
    out.max_backward_residual = sim.max_backward_residual
    out.mean_backward_residual = sim.mean_backward_residual
    out.max_abs_y = sim.max_abs_y
    out.escaped_paths = sim.escaped_paths
    return out
