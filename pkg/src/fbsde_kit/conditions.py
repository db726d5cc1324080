"""Numerical audit of structural and monotonicity assumptions.

Difference quotients follow the telescoping index order of the comparison
argument: when the quotient varies the j-th y coordinate, coordinates
1..j-1 are already at the second point and j+1..n are still at the first.
The 0/0 convention applies coordinate-wise: a zero denominator makes the
quotient 0.

All checks are sampling based.  A "pass" verdict means no violation over
the drawn sample pairs; a "fail" verdict always carries a witness point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .problem import FBSDEProblem, diffusion, terminal

STRUCTURAL_TOL = 1e-8    # relative slack on declared constants
MONOTONE_TOL = 1e-10     # absolute slack on sign conditions


def locality_radius(K: float, d: int, n: int) -> float:
    """The z-box radius M = 8 K^2 sqrt(d n) inside which the x-Lipschitz
    bound of the super-quadratic class is required to hold."""
    return 8.0 * K * K * np.sqrt(d * n)


@dataclass
class QuotientSet:
    """Telescoped difference quotients between two evaluation points.

    All arrays carry the broadcast batch shape of the inputs in their
    leading dimensions.
    """

    h1: np.ndarray                      # (..., n)
    b1: np.ndarray                      # (...,)
    b2: np.ndarray                      # (..., n)
    f1: np.ndarray                      # (..., n)
    f2: np.ndarray                      # (..., n, n)
    f3: np.ndarray                      # (..., n, d)
    b3: Optional[np.ndarray]            # (..., d), drift_uses_z only
    sigma1: Optional[np.ndarray]        # (..., d), diffusion_uses_state only
    sigma2: Optional[np.ndarray]        # (..., d, n), diffusion_uses_state only
    theta1: tuple
    theta2: tuple


@dataclass
class ConditionReport:
    """Verdict for one assumption family over a sample run."""

    condition: str
    verdict: str                        # pass | fail | inconclusive
    witness: Optional[dict] = None
    estimates: dict = field(default_factory=dict)
    samples: int = 0

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "witness": self.witness,
            "estimates": {
                k: float(v) if math.isfinite(v) else None
                for k, v in self.estimates.items()
            },
            "samples": int(self.samples),
        }


def _quot(num, den):
    num, den = np.broadcast_arrays(np.asarray(num, float), np.asarray(den, float))
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=(den != 0))
    return out


def _row(p, i0, t, x, y, zrow, ztemplate):
    """Driver row i0 (0-based) with a (..., d) row argument, regardless of
    whether the handle takes the row or the full matrix."""
    if p.driver_takes_full_z:
        z = np.array(ztemplate, dtype=float, copy=True)
        z[..., i0, :] = zrow
        return np.asarray(p.f[i0](t, x, y, z), dtype=float)
    return np.asarray(p.f[i0](t, x, y, zrow), dtype=float)


def _ymix(y1, y2, m):
    """First m coordinates from y2, the rest from y1."""
    if m == 0:
        return y1
    n = y1.shape[-1]
    if m == n:
        return y2
    return np.concatenate([y2[..., :m], y1[..., m:]], axis=-1)


def _zmix(z1row, z2row, m):
    if m == 0:
        return z1row
    d = z1row.shape[-1]
    if m == d:
        return z2row
    return np.concatenate([z2row[..., :m], z1row[..., m:]], axis=-1)


def difference_quotients(p: FBSDEProblem, theta1, theta2, t=0.0) -> QuotientSet:
    """Compute all telescoped quotients between theta1 and theta2.

    Each theta is a tuple (x, y, z) with x (...), y (..., n), z (..., n, d);
    scalars broadcast.  ``t`` may be a scalar or a batch of times.
    """
    x1, y1, z1 = (np.asarray(a, float) for a in theta1)
    x2, y2, z2 = (np.asarray(a, float) for a in theta2)
    n, d = p.n, p.d
    dx = x1 - x2
    dy = y1 - y2
    dz = z1 - z2

    h1 = _quot(terminal(p, x1) - terminal(p, x2), dx[..., None])

    def bfun(x, y, zrow=None):
        if p.drift_uses_z:
            return np.asarray(p.b(t, x, y, zrow), float)
        return np.asarray(p.b(t, x, y), float)

    z1row0 = z1[..., 0, :]
    b1 = _quot(bfun(x1, y1, z1row0) - bfun(x2, y1, z1row0), dx)

    ymixes = [_ymix(y1, y2, m) for m in range(n + 1)]
    bvals = [bfun(x2, ym, z1row0) for ym in ymixes]
    b2 = np.stack(
        [_quot(bvals[j] - bvals[j + 1], dy[..., j]) for j in range(n)], axis=-1
    )

    b3 = None
    if p.drift_uses_z:
        zmixes = [_zmix(z1row0, z2[..., 0, :], m) for m in range(d + 1)]
        bz = [bfun(x2, y2, zm) for zm in zmixes]
        b3 = np.stack(
            [_quot(bz[k] - bz[k + 1], dz[..., 0, k]) for k in range(d)], axis=-1
        )

    f1_cols, f2_rows, f3_rows = [], [], []
    for i0 in range(n):
        z1row = z1[..., i0, :]
        z2row = z2[..., i0, :]
        f1_cols.append(
            _quot(_row(p, i0, t, x1, y1, z1row, z1) - _row(p, i0, t, x2, y1, z1row, z1), dx)
        )
        fy = [_row(p, i0, t, x2, ym, z1row, z1) for ym in ymixes]
        f2_rows.append(
            np.stack([_quot(fy[j] - fy[j + 1], dy[..., j]) for j in range(n)], axis=-1)
        )
        zmixes = [_zmix(z1row, z2row, m) for m in range(d + 1)]
        fz = [_row(p, i0, t, x2, y2, zm, z1) for zm in zmixes]
        f3_rows.append(
            np.stack([_quot(fz[k] - fz[k + 1], dz[..., i0, k]) for k in range(d)], axis=-1)
        )
    f1 = np.stack(f1_cols, axis=-1)
    f2 = np.stack(f2_rows, axis=-2)
    f3 = np.stack(f3_rows, axis=-2)

    sigma1 = sigma2 = None
    if p.diffusion_uses_state:
        s = lambda x, y: np.asarray(p.sigma(t, x, y), float)  # noqa: E731
        sigma1 = _quot(s(x1, y1) - s(x2, y1), dx[..., None])
        svals = [s(x2, ym) for ym in ymixes]
        sigma2 = np.stack(
            [_quot(svals[j] - svals[j + 1], dy[..., j][..., None]) for j in range(n)],
            axis=-1,
        )

    return QuotientSet(
        h1=h1, b1=b1, b2=b2, f1=f1, f2=f2, f3=f3,
        b3=b3, sigma1=sigma1, sigma2=sigma2,
        theta1=(x1, y1, z1), theta2=(x2, y2, z2),
    )


def default_sampler(p: FBSDEProblem, box: float = 3.0):
    """Uniform point-pair sampler over a centered box."""

    def sample(rng: np.random.Generator, count: int):
        t = rng.uniform(0.0, p.T, size=count)
        mk = lambda shape: rng.uniform(-box, box, size=shape)  # noqa: E731
        theta1 = (mk(count), mk((count, p.n)), mk((count, p.n, p.d)))
        theta2 = (mk(count), mk((count, p.n)), mk((count, p.n, p.d)))
        return t, theta1, theta2

    return sample


def _witness(t, theta1, theta2, idx, value) -> dict:
    x1, y1, z1 = theta1
    x2, y2, z2 = theta2
    return {
        "t": float(np.asarray(t).reshape(-1)[idx] if np.ndim(t) else t),
        "x1": float(x1[idx]), "x2": float(x2[idx]),
        "y1": np.asarray(y1[idx]).tolist(), "y2": np.asarray(y2[idx]).tolist(),
        "z1": np.asarray(z1[idx]).tolist(), "z2": np.asarray(z2[idx]).tolist(),
        "value": float(value),
    }


def _report(cid, margins, t, theta1, theta2, estimates, N, tol) -> ConditionReport:
    """Build a report from per-sample violation margins (positive = violated)."""
    worst = float(margins.max(initial=-np.inf))
    idx = int(np.argmax(margins)) if margins.size else 0
    verdict = "fail" if worst > tol else "pass"
    witness = _witness(t, theta1, theta2, idx, worst) if verdict == "fail" else None
    return ConditionReport(cid, verdict, witness, estimates, N)


def _eval_driver(p, t, x, y, z):
    rows = [_row(p, i0, t, x, y, z[..., i0, :], z) for i0 in range(p.n)]
    return np.stack(rows, axis=-1)


def check_structural(
    p: FBSDEProblem,
    sampler=None,
    N: int = 10_000,
    seed: int = 0,
) -> list:
    """Audit (H) plus the growth-class family ((A1), (A2) or (A3)) and,
    when the corresponding flags are set, the sigma/drift parts of
    (B1)/(B2), against the declared constants K (and lam)."""
    sampler = sampler or default_sampler(p)
    rng = np.random.default_rng(seed)
    t, th1, th2 = sampler(rng, N)
    x1, y1, z1 = (np.asarray(a, float) for a in th1)
    x2, y2, z2 = (np.asarray(a, float) for a in th2)
    K = p.K
    rtol = STRUCTURAL_TOL
    reports = []

    def bfun(x, y, zrow):
        if p.drift_uses_z:
            return np.asarray(p.b(t, x, y, zrow), float)
        return np.asarray(p.b(t, x, y), float)

    # --- (H): drift Lipschitz + linear growth, terminal Lipschitz -------
    bd = np.abs(bfun(x1, y1, z1[..., 0, :]) - bfun(x2, y2, z2[..., 0, :]))
    brad = np.abs(x1 - x2) + np.linalg.norm(y1 - y2, axis=-1)
    if p.drift_uses_z:
        brad = brad + np.linalg.norm(z1[..., 0, :] - z2[..., 0, :], axis=-1)
    lip_margin = bd - K * brad * (1.0 + rtol)
    bg = np.abs(bfun(x1, y1, z1[..., 0, :]))
    growth_margin = bg - K * (1.0 + np.abs(x1) + np.linalg.norm(y1, axis=-1)) * (1.0 + rtol)
    hd = np.linalg.norm(terminal(p, x1) - terminal(p, x2), axis=-1)
    h_margin = hd - K * np.abs(x1 - x2) * (1.0 + rtol)
    margins = np.maximum(np.maximum(lip_margin, growth_margin), h_margin)
    estimates = {
        "b_lipschitz": float(np.max(_quot(bd, brad), initial=0.0)),
        "h_lipschitz": float(np.max(_quot(hd, np.abs(x1 - x2)), initial=0.0)),
    }
    reports.append(_report("H", margins, t, th1, th2, estimates, N, 0.0))

    f_a = _eval_driver(p, t, x1, y1, z1)
    f_b = _eval_driver(p, t, x2, y2, z2)
    fd = np.linalg.norm(f_a - f_b, axis=-1)

    if p.growth_class == "lipschitz":
        rad = (
            np.abs(x1 - x2)
            + np.linalg.norm(y1 - y2, axis=-1)
            + np.linalg.norm((z1 - z2).reshape(z1.shape[:-2] + (-1,)), axis=-1)
        )
        margins = fd - K * rad * (1.0 + rtol)
        est = {"f_lipschitz": float(np.max(_quot(fd, rad), initial=0.0))}
        reports.append(_report("A1", margins, t, th1, th2, est, N, 0.0))
    elif p.growth_class == "quadratic":
        lam = p.lam if p.lam is not None else np.inf
        hb = np.linalg.norm(terminal(p, x1), axis=-1)
        bound_margin = hb - lam * (1.0 + rtol) - 1e-12
        zn1 = np.linalg.norm(z1.reshape(z1.shape[:-2] + (-1,)), axis=-1)
        zn2 = np.linalg.norm(z2.reshape(z2.shape[:-2] + (-1,)), axis=-1)
        growth = np.linalg.norm(f_a, axis=-1) - K * (
            1.0 + np.linalg.norm(y1, axis=-1) + zn1 ** 2
        ) * (1.0 + rtol)
        loc = fd - (
            K * (np.abs(x1 - x2) + np.linalg.norm(y1 - y2, axis=-1))
            + K * (1.0 + zn1 + zn2)
            * np.linalg.norm((z1 - z2).reshape(z1.shape[:-2] + (-1,)), axis=-1)
        ) * (1.0 + rtol)
        margins = np.maximum(np.maximum(bound_margin, growth), loc)
        est = {"terminal_bound": float(np.max(hb, initial=0.0))}
        reports.append(_report("A2", margins, t, th1, th2, est, N, 0.0))
    else:  # superquadratic
        M = locality_radius(K, p.d, p.n)
        # rescale z samples into the locality box for the x-Lipschitz part
        zflat = z1.reshape(z1.shape[:-2] + (-1,))
        norms = np.linalg.norm(zflat, axis=-1)[..., None, None]
        scale = np.where(norms > M, M / np.maximum(norms, 1e-300), 1.0)
        z_loc = z1 * scale
        fx1 = _eval_driver(p, t, x1, y1, z_loc)
        fx2 = _eval_driver(p, t, x2, y1, z_loc)
        xlip = np.linalg.norm(fx1 - fx2, axis=-1) - K * np.abs(x1 - x2) * (1.0 + rtol)
        mixed_lhs = np.linalg.norm(
            _eval_driver(p, t, x1, y1, z1)
            - _eval_driver(p, t, x2, y1, z1)
            - _eval_driver(p, t, x1, y2, z2)
            + _eval_driver(p, t, x2, y2, z2),
            axis=-1,
        )
        mixed_rhs = K * np.abs(x1 - x2) * (
            np.linalg.norm(y1 - y2, axis=-1)
            + np.linalg.norm((z1 - z2).reshape(z1.shape[:-2] + (-1,)), axis=-1)
        )
        mixed = mixed_lhs - mixed_rhs * (1.0 + rtol) - 1e-10
        margins = np.maximum(xlip, mixed)
        est = {"locality_radius": M}
        reports.append(_report("A3", margins, t, th1, th2, est, N, 0.0))

    if p.diffusion_uses_state:
        s1 = np.asarray(p.sigma(t, x1, y1), float)
        s2 = np.asarray(p.sigma(t, x2, y2), float)
        sd = np.linalg.norm(s1 - s2, axis=-1)
        rad = np.abs(x1 - x2) + np.linalg.norm(y1 - y2, axis=-1)
        margins = sd - K * rad * (1.0 + rtol)
        est = {"sigma_lipschitz": float(np.max(_quot(sd, rad), initial=0.0))}
        reports.append(_report("B1", margins, t, th1, th2, est, N, 0.0))
    if p.drift_uses_z:
        est = {"b_lipschitz_with_z": float(np.max(_quot(bd, brad), initial=0.0))}
        reports.append(_report("B2", lip_margin, t, th1, th2, est, N, 0.0))
    return reports


def check_monotonicity(
    p: FBSDEProblem,
    which: Sequence[str] = ("M1", "M2", "M3"),
    sampler=None,
    N: int = 10_000,
    seed: int = 0,
) -> list:
    """Sign checks on the telescoped quotients over sampled point pairs."""
    which = [w.upper() for w in which]
    for w in which:
        if w not in {"M1", "M2", "M3", "M4", "M5"}:
            raise ValueError(f"unknown monotonicity condition {w}")
    if "M4" in which and not p.diffusion_uses_state:
        raise ValueError("M4 requires diffusion_uses_state")
    if "M5" in which and not (p.drift_uses_z and p.n == 1):
        raise ValueError("M5 requires drift_uses_z and n = 1")

    sampler = sampler or default_sampler(p)
    rng = np.random.default_rng(seed)
    t, th1, th2 = sampler(rng, N)
    q = difference_quotients(p, th1, th2, t=t)
    tol = MONOTONE_TOL
    reports = []

    def sign_report(cid, violation, estimate_name):
        # violation: (..., ) per-sample margin, positive means violated
        flat = violation.reshape(violation.shape[0], -1).max(axis=-1)
        est = {estimate_name: float(flat.max(initial=-np.inf))}
        reports.append(_report(cid, flat, t, th1, th2, est, N, tol))

    for w in which:
        if w == "M1":
            sign_report("M1", q.b2, "max_b2")
        elif w == "M2":
            off = q.f2.copy()
            idx = np.arange(p.n)
            off[..., idx, idx] = np.inf    # diagonal entries are unconstrained
            sign_report("M2", -off, "min_off_diagonal_f2_negated")
        elif w == "M3":
            sign_report("M3", np.maximum(-q.f1, -q.h1), "max_negative_quotient")
        elif w == "M4":
            # b2_j + sum_k f3_{ik} sigma2_{kj} <= 0 for every row i
            cross = np.einsum("...ik,...kj->...ij", q.f3, q.sigma2)
            sign_report("M4", q.b2[..., None, :] + cross, "max_m4")
        elif w == "M5":
            s1 = q.sigma1 if q.sigma1 is not None else np.zeros_like(q.f3[..., 0, :])
            s2 = q.sigma2[..., 0] if q.sigma2 is not None else np.zeros_like(q.f3[..., 0, :])
            e1 = (
                q.b2[..., 0]
                + np.einsum("...k,...k->...", q.f3[..., 0, :], s2)
                + np.einsum("...k,...k->...", q.b3, s1)
            )
            e2 = np.einsum("...k,...k->...", q.b3, s2)
            sign_report("M5", np.stack([e1, e2], axis=-1), "max_m5")
    return reports


def check_peng_wu(G: float = 1.0, box: float = 3.0, N: int = 1000, seed: int = 0) -> ConditionReport:
    """Evaluate the continuation-method monotonicity functional for the
    built-in linear example (drift -y, driver x - y - z, terminal x).

    The functional G[-(dx)^2 - (dy)^2 + dx dy + dx dz] must keep one sign
    for the method of continuation to apply; a sign flip over the sampled
    difference vectors is a "fail" verdict (monotonicity violated), with
    witnesses for both signs.  The terminal part (dx)^2 >= 0 always holds.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    dx, dy, dz = rng.uniform(-box, box, size=(3, N))
    vals = G * (-dx ** 2 - dy ** 2 + dx * dy + dx * dz)
    tol = 1e-12
    i_max = int(np.argmax(vals))
    i_min = int(np.argmin(vals))
    has_pos = vals[i_max] > tol
    has_neg = vals[i_min] < -tol
    est = {"max_value": float(vals[i_max]), "min_value": float(vals[i_min])}
    if has_pos and has_neg:
        witness = {
            "positive": {"dx": float(dx[i_max]), "dy": float(dy[i_max]),
                         "dz": float(dz[i_max]), "value": float(vals[i_max])},
            "negative": {"dx": float(dx[i_min]), "dy": float(dy[i_min]),
                         "dz": float(dz[i_min]), "value": float(vals[i_min])},
        }
        return ConditionReport("PengWu", "fail", witness, est, N)
    if G == 0:
        return ConditionReport("PengWu", "inconclusive", None, est, N)
    return ConditionReport("PengWu", "pass", None, est, N)
