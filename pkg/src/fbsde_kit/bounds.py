"""Slope envelope, sub-interval length selection, and time partitions.

The envelope ybar_t solves the backward ODE

    ybar_t = H + int_t^T (A |ybar_s| + K |ybar_s| + B) ds,

where every component of H, B and every entry of A equals K.  Its value
dominates the spatial slope of the decoupling field, and the closed-form
cap n K (T+1) e^{(n+1) K T} bounds it uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DeltaSelectionError, EnvelopeOverflowError, PicardNonConvergenceError
from .problem import FBSDEProblem


@dataclass(frozen=True)
class LipschitzEnvelope:
    """Backward-ODE slope bound on a dense time grid."""

    times: np.ndarray    # (M+1,) ascending, times[0] = 0, times[-1] = T
    values: np.ndarray   # (M+1, n), nonnegative, nonincreasing in t
    K: float
    n: int
    T: float
    cap: float           # n K (T+1) e^{(n+1) K T}

    def value(self, t: float) -> np.ndarray:
        """Component-wise envelope at time t (linear interpolation)."""
        t = float(np.clip(t, self.times[0], self.times[-1]))
        out = np.empty(self.n)
        for i in range(self.n):
            out[i] = np.interp(t, self.times, self.values[:, i])
        return out

    @property
    def max(self) -> float:
        return float(self.values.max(initial=0.0))


@dataclass(frozen=True)
class Partition:
    """Uniform breakpoints 0 = t_0 < ... < t_m = T with mesh <= delta."""

    breakpoints: np.ndarray
    delta: float

    @property
    def intervals(self):
        bp = self.breakpoints
        return [(float(bp[i]), float(bp[i + 1])) for i in range(len(bp) - 1)]


def analytic_cap(K: float, n: int, T: float) -> float:
    exponent = (n + 1) * K * T
    if exponent > 700.0:
        return math.inf
    return n * K * (T + 1.0) * math.exp(exponent)


def integrate_envelope(K: float, n: int, T: float, steps: int = 2048) -> LipschitzEnvelope:
    """Integrate the envelope ODE backward from T with classical RK4.

    Since the solution stays nonnegative, the absolute values in the
    integrand are the identity and the ODE is linear; RK4 is kept so the
    data (A, B, H) could later become time-dependent.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if K < 0 or n < 1 or not T > 0:
        raise ValueError("require K >= 0, n >= 1, T > 0")
    cap = analytic_cap(K, n, T)
    if not math.isfinite(cap):
        raise EnvelopeOverflowError(K, n, T)

    def rhs(y):
        # d ybar / dt = -(A|y| + K|y| + B) with nonnegativity making |.| exact
        a = np.abs(y)
        return -(K * a.sum() + K * a + K)

    h = T / steps
    times = np.linspace(0.0, T, steps + 1)
    values = np.empty((steps + 1, n))
    y = np.full(n, K, dtype=float)
    values[-1] = y
    for j in range(steps, 0, -1):
        k1 = rhs(y)
        k2 = rhs(y - 0.5 * h * k1)
        k3 = rhs(y - 0.5 * h * k2)
        k4 = rhs(y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        values[j - 1] = y
    if not np.all(np.isfinite(values)):
        raise EnvelopeOverflowError(K, n, T)
    # RK4 on the linear system preserves nonnegativity up to rounding.
    np.clip(values, 0.0, None, out=values)
    return LipschitzEnvelope(times=times, values=values, K=K, n=n, T=T, cap=cap)


def select_delta(
    p: FBSDEProblem,
    env: LipschitzEnvelope,
    probe: Callable[[float, float], float],
    *,
    contraction_threshold: float = 0.9,
    max_halvings: int = 20,
) -> float:
    """Pick the largest delta from the ladder T/2^k whose local solve contracts.

    ``probe(delta, cap)`` runs a trial Picard solve on [T - delta, T] with
    the problem's terminal condition and returns the observed worst
    contraction ratio between successive iterates (0 if it converged
    immediately, inf on failure).  ``cap`` is the envelope maximum, the
    terminal-Lipschitz input of the trial.
    """
    cap = env.max
    for k in range(max_halvings + 1):
        delta = p.T / (2 ** k)
        try:
            ratio = probe(delta, cap)
        except PicardNonConvergenceError:
            continue
        if ratio < contraction_threshold:
            return delta
    raise DeltaSelectionError(
        f"no contracting sub-interval length found down to T/2^{max_halvings}"
    )


def make_partition(T: float, delta: float) -> Partition:
    """Uniform partition of [0, T] into m = ceil(T/delta) intervals."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    m = max(1, math.ceil(T / delta - 1e-12))
    return Partition(breakpoints=np.linspace(0.0, T, m + 1), delta=float(delta))
