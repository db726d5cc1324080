"""Problem description for coupled forward-backward systems with diagonal drivers.

The forward state is scalar; the backward value Y lives in R^n and Z in
R^{n x d}.  Coefficient handles must be pure functions, broadcastable over
numpy arrays:

    b(t, x, y)            -> shape of x         (or b(t, x, y, z) when drift_uses_z)
    sigma(t)              -> (d,)               (or sigma(t, x, y) -> (..., d))
    f[i](t, x, y, z_row)  -> shape of x         with y (..., n), z_row (..., d)
    h(x)                  -> (..., n)

Each driver row reads only its own row of Z.  Handles built from a full
(n x d) matrix argument are supported through ``driver_takes_full_z``; in
that case ``f[i](t, x, y, z)`` receives the full matrix and the validator
probes the diagonal contract numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CoefficientEvaluationError

GROWTH_CLASSES = ("lipschitz", "quadratic", "superquadratic")


@dataclass(frozen=True)
class FBSDEProblem:
    """A coupled forward-backward system on [0, T] with scalar forward state."""

    n: int
    d: int
    T: float
    x0: float
    b: Callable
    sigma: Callable
    f: Sequence[Callable]
    h: Callable
    K: float
    growth_class: str = "lipschitz"
    lam: Optional[float] = None
    drift_uses_z: bool = False
    diffusion_uses_state: bool = False
    driver_takes_full_z: bool = False
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class SolutionPath:
    """One simulated (X, Y, Z) trajectory on a time grid."""

    times: np.ndarray       # (N+1,)
    X: np.ndarray           # (N+1,)
    Y: np.ndarray           # (N+1, n)
    Z: np.ndarray           # (N+1, n, d)
    dW: np.ndarray          # (N, d)
    seed: int


def drift(p: FBSDEProblem, t, x, y, z=None):
    """Evaluate the forward drift, dispatching on the drift_uses_z flag."""
    if p.drift_uses_z:
        out = np.asarray(p.b(t, x, y, z), dtype=float)
    else:
        out = np.asarray(p.b(t, x, y), dtype=float)
    return out


def diffusion(p: FBSDEProblem, t, x=None, y=None):
    """Evaluate sigma; returns (d,) for time-only diffusion, (..., d) otherwise."""
    if p.diffusion_uses_state:
        return np.asarray(p.sigma(t, x, y), dtype=float)
    return np.asarray(p.sigma(t), dtype=float)


def terminal(p: FBSDEProblem, x):
    """Evaluate the terminal condition h(x) with shape (..., n)."""
    out = np.asarray(p.h(x), dtype=float)
    if out.shape[-1:] != (p.n,):
        raise ValueError(f"terminal handle must return trailing dimension {p.n}")
    return out


def driver_row(p: FBSDEProblem, i: int, t, x, y, z_row):
    """Evaluate driver row i (1-based) at (t, x, y, z_row).

    ``z_row`` is the i-th row of Z, shape (..., d) (or the full (..., n, d)
    matrix for full-matrix handles).  Raises CoefficientEvaluationError on
    non-finite output.
    """
    if not 1 <= i <= p.n:
        raise IndexError(f"driver row {i} out of range 1..{p.n}")
    out = np.asarray(p.f[i - 1](t, x, y, z_row), dtype=float)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))
        idx = tuple(bad[0]) if bad.size else ()
        point = {"row": i, "t": t, "index": idx}
        raise CoefficientEvaluationError(f"f^{i}", point)
    return out


def driver_row_from_matrix(p: FBSDEProblem, i: int, t, x, y, z):
    """Evaluate driver row i from the full Z matrix, honoring the handle style."""
    z = np.asarray(z, dtype=float)
    if p.driver_takes_full_z:
        return driver_row(p, i, t, x, y, z)
    return driver_row(p, i, t, x, y, z[..., i - 1, :])


def _probe_points(p: FBSDEProblem, count: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, p.T, size=count)
    xs = rng.uniform(-2.0, 2.0, size=count)
    ys = rng.uniform(-2.0, 2.0, size=(count, p.n))
    zs = rng.uniform(-2.0, 2.0, size=(count, p.n, p.d))
    return ts, xs, ys, zs


def validate_problem(p: FBSDEProblem) -> list:
    """Check structural invariants; returns a list of violation strings.

    An empty list means the problem is well formed.  The diagonal contract
    is probed by evaluating each row at two Z matrices that differ only
    outside that row and requiring equal outputs.
    """
    violations = []
    if p.n < 1:
        violations.append("n must be >= 1")
    if p.d < 1:
        violations.append("d must be >= 1")
    if not p.T > 0:
        violations.append("T must be > 0")
    if p.K < 0:
        violations.append("K must be >= 0")
    if not np.isfinite(p.x0):
        violations.append("x0 must be finite")
    if p.growth_class not in GROWTH_CLASSES:
        violations.append(f"growth_class must be one of {GROWTH_CLASSES}")
    if p.growth_class == "quadratic" and p.lam is None:
        violations.append("quadratic growth requires a declared terminal bound lam")
    if p.drift_uses_z and p.n != 1:
        violations.append("drift_uses_z requires n = 1")
    if (p.drift_uses_z or p.diffusion_uses_state) and p.growth_class != "lipschitz":
        violations.append("state-dependent diffusion / z-dependent drift require growth_class = lipschitz")
    if len(p.f) != max(p.n, 1):
        violations.append(f"expected {p.n} driver rows, got {len(p.f)}")
    if violations:
        return violations

    try:
        terminal(p, np.linspace(-1.0, 1.0, 3))
    except ValueError as exc:
        violations.append(f"terminal handle: {exc}")

    # Diagonal-structure probe (only full-matrix handles can violate it).
    if p.driver_takes_full_z:
        ts, xs, ys, zs = _probe_points(p)
        rng = np.random.default_rng(1)
        for i in range(1, p.n + 1):
            for m in range(len(ts)):
                z_a = zs[m].copy()
                z_b = zs[m].copy()
                mask = np.ones(p.n, dtype=bool)
                mask[i - 1] = False
                z_b[mask, :] = rng.uniform(-2.0, 2.0, size=(p.n - 1, p.d))
                try:
                    va = driver_row(p, i, ts[m], xs[m], ys[m], z_a)
                    vb = driver_row(p, i, ts[m], xs[m], ys[m], z_b)
                except CoefficientEvaluationError as exc:
                    violations.append(f"coefficient evaluation failed during probe: {exc}")
                    break
                if abs(float(va) - float(vb)) > 1e-12 * (1.0 + abs(float(va))):
                    violations.append(
                        f"diagonal structure: f^{i} depends on z outside row {i}"
                    )
                    break
    return violations


def as_time_function(value):
    """Lift a scalar coefficient to a constant function of t."""
    if callable(value):
        return value
    c = float(value)
    return lambda t: c


def constant_sigma(values, d: int):
    """Build a sigma(t) handle from a scalar or length-d sequence."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.shape != (d,):
        if arr.size == 1:
            arr = np.full(d, float(arr[0]))
        else:
            raise ValueError(f"sigma must have {d} components")
    arr = arr.copy()
    return lambda t: arr
