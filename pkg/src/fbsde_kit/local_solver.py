"""Single sub-interval solve: quadrature backward scheme + Picard coupling.

On a sub-interval [s, e] with a Lipschitz terminal field, the coupled
system is solved by Picard iteration over the forward-backward coupling.
Each pass runs a backward sweep: conditional expectations are computed by
Gauss-Hermite quadrature of the one-step Euler transition (no inversion of
sigma is ever needed, so degenerate diffusions are fine), Z comes from the
martingale projection E[u(X_next) dW] / dt, and Y solves the implicit
driver fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bounds import LipschitzEnvelope
from .conditions import locality_radius
from .errors import (
    CoefficientEvaluationError,
    FixedPointError,
    PicardNonConvergenceError,
    ZBoundExceededError,
)
from .problem import FBSDEProblem, diffusion, drift

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 50
PICARD_TOL = 1e-9
PICARD_MAX_PASSES = 100


@dataclass(frozen=True)
class GridSpec:
    """Space grid, per-sub-interval time resolution and quadrature order."""

    x_min: float
    x_max: float
    nx: int
    nt_per_subinterval: int
    quad: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if self.nx < 2:
            raise ValueError("nx must be >= 2")
        if self.nt_per_subinterval < 1:
            raise ValueError("nt_per_subinterval must be >= 1")
        if self.quad < 2:
            raise ValueError("quad must be >= 2")

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)


@dataclass
class FieldSlice:
    """Decoupling-field values on one sub-interval.

    u has shape (L+1, nx, n) with u[-1] equal to the sampled terminal
    field; v has shape (L+1, nx, n, d) (the last layer repeats the one
    before it, since the projection needs a step ahead).
    """

    s: float
    e: float
    times: np.ndarray
    x_nodes: np.ndarray
    u: np.ndarray
    v: np.ndarray
    picard_passes: int
    contraction_ratios: list
    terminal_slope: float
    growth_violations: int = 0


def gauss_hermite_rule(q: int, d: int):
    """Tensorized Gauss-Hermite nodes/weights for a standard d-dim normal.

    Weights are normalized to sum to one; odd q includes the zero node.
    Returns (nodes (q^d, d), weights (q^d,)).
    """
    x, w = np.polynomial.hermite.hermgauss(q)
    nodes1 = np.sqrt(2.0) * x
    weights1 = w / np.sqrt(np.pi)
    weights1 = weights1 / weights1.sum()
    grids = np.meshgrid(*([nodes1] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([weights1] * d), indexing="ij")
    weights = np.ones(nodes.shape[0])
    for g in wgrids:
        weights = weights * g.ravel()
    weights = weights / weights.sum()
    return nodes, weights


def clamped_interp(xq, x_nodes, values, lo_slope=None, hi_slope=None):
    """Linear interpolation of grid values (nx, n) at arbitrary points.

    Outside [x_min, x_max] the continuation is linear with the boundary
    slope clamped into [lo_slope, hi_slope] (component-wise bounds may be
    scalars or length-n arrays); with both bounds None the raw boundary
    slope is used.
    """
    xq = np.asarray(xq, float)
    x_nodes = np.asarray(x_nodes, float)
    values = np.asarray(values, float)
    n = values.shape[1]
    flat = xq.ravel()
    inner = np.clip(flat, x_nodes[0], x_nodes[-1])
    out = np.empty((flat.size, n))
    for i in range(n):
        out[:, i] = np.interp(inner, x_nodes, values[:, i])
    left = flat < x_nodes[0]
    right = flat > x_nodes[-1]
    if left.any() or right.any():
        sl = (values[1] - values[0]) / (x_nodes[1] - x_nodes[0])
        sr = (values[-1] - values[-2]) / (x_nodes[-1] - x_nodes[-2])
        if lo_slope is not None or hi_slope is not None:
            lo = -np.inf if lo_slope is None else lo_slope
            hi = np.inf if hi_slope is None else hi_slope
            sl = np.clip(sl, lo, hi)
            sr = np.clip(sr, lo, hi)
        if left.any():
            out[left] += (flat[left] - x_nodes[0])[:, None] * sl
        if right.any():
            out[right] += (flat[right] - x_nodes[-1])[:, None] * sr
    return out.reshape(xq.shape + (n,))


def _grid_slopes(x_nodes, values):
    return (values[1:] - values[:-1]) / (x_nodes[1:, None] - x_nodes[:-1, None])


def backward_step(
    p: FBSDEProblem,
    t: float,
    dt: float,
    x_nodes: np.ndarray,
    u_next: Callable,
    u_guess_vals: np.ndarray,
    v_guess_vals: Optional[np.ndarray] = None,
    quad=None,
):
    """One backward time step on the grid.

    ``u_next`` is a spatial function x -> (..., n) (the field one step
    ahead); ``u_guess_vals`` (nx, n) supplies the coupling value of Y in
    the forward coefficients (the previous Picard iterate), and
    ``v_guess_vals`` (nx, n, d) likewise for z-dependent drifts.

    Returns (u (nx, n), v (nx, n, d), growth_violations).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    nx = x_nodes.size
    n, d = p.n, p.d
    if quad is None:
        quad = gauss_hermite_rule(7, d)
    nodes, weights = quad
    sqdt = np.sqrt(dt)

    if p.drift_uses_z:
        zg = v_guess_vals[:, 0, :] if v_guess_vals is not None else np.zeros((nx, d))
        bval = drift(p, t, x_nodes, u_guess_vals, zg)
    else:
        bval = drift(p, t, x_nodes, u_guess_vals)
    sig = diffusion(p, t, x_nodes, u_guess_vals)
    if not np.all(np.isfinite(bval)):
        raise CoefficientEvaluationError("b", {"t": t})
    if not np.all(np.isfinite(sig)):
        raise CoefficientEvaluationError("sigma", {"t": t})
    if sig.ndim == 1:
        noise = nodes @ sig                    # (Q,)
        x_hat = x_nodes[:, None] + bval[:, None] * dt + sqdt * noise[None, :]
    else:
        noise = nodes @ sig.T                  # (Q, nx) -> transpose
        x_hat = x_nodes[:, None] + bval[:, None] * dt + sqdt * noise.T

    u_hat = np.asarray(u_next(x_hat), float)   # (nx, Q, n)
    expect = np.einsum("q,xqi->xi", weights, u_hat)
    v = np.einsum("q,xqi,qk->xik", weights, u_hat, nodes) / sqdt

    if p.growth_class == "superquadratic":
        M = locality_radius(p.K, d, n)
        worst = float(np.max(np.linalg.norm(v.reshape(nx, -1), axis=-1), initial=0.0))
        if worst > M:
            raise ZBoundExceededError(worst, M)

    clip_growth = p.growth_class == "quadratic"
    growth_violations = 0

    def driver_values(y):
        nonlocal growth_violations
        rows = np.empty((nx, n))
        for i0 in range(n):
            zrow = v[:, i0, :]
            if p.driver_takes_full_z:
                rows[:, i0] = np.asarray(p.f[i0](t, x_nodes, y, v), float)
            else:
                rows[:, i0] = np.asarray(p.f[i0](t, x_nodes, y, zrow), float)
        if not np.all(np.isfinite(rows)):
            raise CoefficientEvaluationError("f", {"t": t})
        if clip_growth:
            zsq = np.linalg.norm(v.reshape(nx, -1), axis=-1) ** 2
            cap = p.K * (1.0 + np.linalg.norm(y, axis=-1) + zsq)
            over = np.abs(rows) > cap[:, None] * (1.0 + 1e-12)
            growth_violations += int(over.sum())
            rows = np.clip(rows, -cap[:, None], cap[:, None])
        return rows

    # implicit fixed point Y = E[u_next] + f(t, x, Y, v) dt, damped iteration
    y = expect.copy()
    omega = 1.0
    prev_res = np.inf
    for _ in range(FIXED_POINT_MAX_ITER):
        target = expect + dt * driver_values(y)
        res = float(np.max(np.abs(target - y)))
        if res < FIXED_POINT_TOL:
            y = target
            break
        if res > prev_res:
            omega = max(0.25, 0.5 * omega)
        prev_res = res
        y = y + omega * (target - y)
    else:
        idx = int(np.argmax(np.abs(target - y)).item()) // n
        raise FixedPointError(float(x_nodes[idx]), res)
    return y, v, growth_violations


def picard_solve_subinterval(
    p: FBSDEProblem,
    terminal_fn: Callable,
    s: float,
    e: float,
    grid: GridSpec,
    env: Optional[LipschitzEnvelope] = None,
    *,
    initial_guess: Optional[Callable] = None,
    tol: float = PICARD_TOL,
    max_passes: int = PICARD_MAX_PASSES,
) -> FieldSlice:
    """Picard iteration over the coupling on [s, e].

    ``terminal_fn`` maps x arrays to (..., n) terminal values.  Pass 0
    freezes the terminal field in time (or uses ``initial_guess`` if
    given); each later pass runs the backward sweep with the forward
    coefficients evaluated at the previous pass's field.  Raises
    PicardNonConvergenceError when the sup-norm differences stop
    contracting, which signals that the sub-interval is too long.
    """
    x_nodes = grid.x_nodes
    nx, n, d = grid.nx, p.n, p.d
    term_vals = np.asarray(terminal_fn(x_nodes), float)
    if term_vals.shape != (nx, n):
        raise ValueError("terminal field must return shape (nx, n)")
    if e < s:
        raise ValueError("need s <= e")
    L = grid.nt_per_subinterval
    times = np.linspace(s, e, L + 1)
    term_slope = float(
        np.max(np.abs(_grid_slopes(x_nodes, term_vals)), initial=0.0)
    )

    if e == s:
        u = np.repeat(term_vals[None], 1, axis=0)
        v = np.zeros((1, nx, n, d))
        return FieldSlice(s, e, np.array([s]), x_nodes, u, v, 0, [], term_slope)

    def slope_bounds(t):
        if env is None:
            return None, None
        return 0.0, env.value(t)

    quad = gauss_hermite_rule(grid.quad, d)

    u_prev = np.empty((L + 1, nx, n))
    if initial_guess is None:
        u_prev[:] = term_vals[None]
    else:
        for j in range(L + 1):
            u_prev[j] = np.asarray(initial_guess(x_nodes), float) if j < L else term_vals
    v_prev = np.zeros((L + 1, nx, n, d))

    ratios = []
    prev_diff = None
    growth_total = 0
    for k in range(max_passes):
        u_cur = np.empty_like(u_prev)
        v_cur = np.zeros_like(v_prev)
        u_cur[L] = term_vals
        growth_total = 0
        for j in range(L - 1, -1, -1):
            dt = times[j + 1] - times[j]
            lo, hi = slope_bounds(times[j + 1])
            layer = u_cur[j + 1]

            def u_next(xq, layer=layer, lo=lo, hi=hi):
                return clamped_interp(xq, x_nodes, layer, lo, hi)

            u_cur[j], v_cur[j], gv = backward_step(
                p, times[j], dt, x_nodes, u_next,
                u_guess_vals=u_prev[j], v_guess_vals=v_prev[j], quad=quad,
            )
            growth_total += gv
        v_cur[L] = v_cur[L - 1]
        diff = float(np.max(np.abs(u_cur - u_prev)))
        if prev_diff is not None and prev_diff > 0:
            ratios.append(diff / prev_diff)
        u_prev, v_prev = u_cur, v_cur
        if diff < tol:
            return FieldSlice(
                s, e, times, x_nodes, u_cur, v_cur, k + 1, ratios,
                term_slope, growth_total,
            )
        if len(ratios) >= 3 and all(r >= 1.0 for r in ratios[-3:]):
            raise PicardNonConvergenceError((s, e), ratios)
        prev_diff = diff
    raise PicardNonConvergenceError((s, e), ratios)


def interpolate_field(slice_or_field, t: float, x, env: Optional[LipschitzEnvelope] = None):
    """Field value at (t, x): linear in t and x, with the out-of-grid slope
    clamped into [0, envelope(t)] when an envelope is supplied."""
    obj = slice_or_field
    times = obj.times
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"t={t} outside field time range [{times[0]}, {times[-1]}]")
    t = float(np.clip(t, times[0], times[-1]))
    env = env if env is not None else getattr(obj, "env", None)
    lo, hi = (0.0, env.value(t)) if env is not None else (None, None)
    j = int(np.searchsorted(times, t, side="right") - 1)
    j = min(max(j, 0), len(times) - 2) if len(times) > 1 else 0
    u = obj.u
    if len(times) == 1:
        return clamped_interp(x, obj.x_nodes, u[0], lo, hi)
    w = (t - times[j]) / (times[j + 1] - times[j])
    a = clamped_interp(x, obj.x_nodes, u[j], lo, hi)
    b = clamped_interp(x, obj.x_nodes, u[j + 1], lo, hi)
    return (1.0 - w) * a + w * b
