"""Built-in problem constructors and independent reference solutions.

Four systems are provided: the coupled linear example (drift -Y, driver
X - Y - Z, terminal X), the linear-quadratic control adjoint system with
a backward Riccati reference, an n-player linear-quadratic game with a
Monte Carlo deviation test for the Nash property, and the delayed-value
BSDE recast as an FBSDE through the auxiliary state X_t = -int_0^t Y ds.

References are restricted to regimes with closed forms (deterministic
sigma, linear terminal slope, constant terminal value); no ground truth
is fabricated outside of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .global_solver import DecouplingField
from .problem import FBSDEProblem, as_time_function, constant_sigma

BUILTIN_NAMES = ("example36", "lq_control", "lq_game", "delayed_bsde")


@dataclass
class LQControlParams:
    """Coefficients of the linear-quadratic control problem.

    The state is dX = (A x + B u) dt + sigma dW and the cost integrand is
    C x + D u + E/2 x^2 + F/2 u^2 plus a terminal g with slope g_x; the
    Hamiltonian minimizer is u = -(B y + D)/F, which requires F > 0, and
    E >= 0 with nondecreasing g_x gives the monotone structure.
    """

    A: object = 1.0
    B: object = 1.0
    C: object = 0.0
    D: object = 0.0
    E: object = 1.0
    F: object = 1.0
    G: float = 1.0          # linear terminal slope g_x(x) = G x + g1
    g1: float = 0.0
    sigma: object = 1.0
    x0: float = 1.0
    T: float = 1.0
    d: int = 1
    K: Optional[float] = None

    def __post_init__(self):
        for nm in ("A", "B", "C", "D", "E", "F"):
            setattr(self, nm, as_time_function(getattr(self, nm)))
        ts = np.linspace(0.0, self.T, 33)
        if min(self.F(t) for t in ts) <= 0:
            raise ValueError("F must be positive")
        if min(self.E(t) for t in ts) < 0:
            raise ValueError("E must be non-negative")
        if self.G < 0:
            raise ValueError("terminal slope must be nondecreasing (G >= 0)")

    def lipschitz_estimate(self) -> float:
        ts = np.linspace(0.0, self.T, 65)
        vals = [
            max(abs(self.A(t)), abs(self.E(t)), self.B(t) ** 2 / self.F(t), self.G)
            for t in ts
        ]
        return float(max(vals))


@dataclass
class GameParams:
    """An n-player game with common scalar state and per-player LQ costs.

    Drift is affine in the controls, b1(t, x) + sum_i b2_i(t) alpha_i, and
    player i minimizes the expectation of
    int (c_i x + d_i alpha_i + e_i/2 x^2 + phi_i/2 alpha_i^2) dt
    plus the terminal G_i/2 x^2 + g1_i x.  phi_i > 0 makes each
    Hamiltonian strictly convex in the own control, so the simultaneous
    minimizer profile exists in closed form.
    """

    n_players: int = 2
    b1: Callable = None         # (t, x) -> drift intercept, default 0
    b1_x: Callable = None       # x-derivative of b1, default 0
    b2: Sequence = (1.0, 1.0)
    c: Sequence = (0.0, 0.0)
    d_lin: Sequence = (0.0, 0.0)
    e: Sequence = (1.0, 1.0)
    phi: Sequence = (1.0, 1.0)
    G: Sequence = (1.0, 1.0)
    g1: Sequence = (0.0, 0.0)
    sigma: object = 1.0
    x0: float = 1.0
    T: float = 1.0
    d: int = 1
    K: Optional[float] = None

    def __post_init__(self):
        n = self.n_players
        if self.b1 is None:
            self.b1 = lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
        if self.b1_x is None:
            b1 = self.b1

            def b1_x(t, x, _h=1e-6):
                return (np.asarray(b1(t, x + _h)) - np.asarray(b1(t, x - _h))) / (2 * _h)

            self.b1_x = b1_x
        for nm in ("b2", "c", "d_lin", "e", "phi", "G", "g1"):
            vals = getattr(self, nm)
            if len(vals) != n:
                raise ValueError(f"{nm} must have one entry per player")
            setattr(self, nm, [as_time_function(v) if nm not in ("G", "g1") else float(v) for v in vals])
        ts = np.linspace(0.0, self.T, 33)
        for i in range(n):
            if min(self.phi[i](t) for t in ts) <= 0:
                raise ValueError("phi must be positive (convexity modulus)")
            if min(self.e[i](t) for t in ts) < 0:
                raise ValueError("e must be non-negative")
            if self.G[i] < 0:
                raise ValueError("terminal slopes must be nondecreasing")

    def minimizer(self, t, i: int, y_i):
        """Simultaneous Hamiltonian minimizer for player i at adjoint value y_i."""
        return -(self.b2[i](t) * y_i + self.d_lin[i](t)) / self.phi[i](t)

    def lipschitz_estimate(self) -> float:
        ts = np.linspace(0.0, self.T, 65)
        xs = np.linspace(-3.0, 3.0, 7)
        vals = []
        for t in ts:
            drift_y = math.sqrt(
                sum((self.b2[i](t) ** 2 / self.phi[i](t)) ** 2 for i in range(self.n_players))
            )
            slope = max(abs(float(self.b1_x(t, x))) for x in xs)
            row = max(
                max(abs(self.e[i](t)), abs(self.c[i](t))) for i in range(self.n_players)
            )
            vals.append(max(drift_y, slope, row, max(self.G)))
        return float(max(vals))


@dataclass
class DelayedBSDESpec:
    """Value-delayed BSDE data: Y_t = xi + int_t^T g(s, int_0^s Y, Z) ds - int Z dW."""

    g: Callable = None            # (t, y_delayed, z) -> real, nonincreasing in y
    xi: float = 1.0
    T: float = 1.0
    growth_class: str = "lipschitz"
    d: int = 1
    K: float = 1.0
    alpha: Optional[float] = None  # shortcut: g = -alpha * y_delayed

    def __post_init__(self):
        if self.g is None:
            if self.alpha is None:
                self.alpha = 1.0
            a = float(self.alpha)
            self.g = lambda t, y, z: -a * y
        # sampled monotonicity check of g in its delayed-value argument
        rng = np.random.default_rng(0)
        for _ in range(64):
            t = rng.uniform(0, self.T)
            y1, y2 = sorted(rng.uniform(-3, 3, size=2))
            z = rng.uniform(-3, 3, size=self.d)
            if float(self.g(t, y1, z)) < float(self.g(t, y2, z)) - 1e-9:
                raise ValueError("generator must be nonincreasing in the delayed value")


def _coerce(params, cls):
    if params is None:
        return cls()
    if isinstance(params, cls):
        return params
    if isinstance(params, dict):
        return cls(**params)
    raise TypeError(f"expected {cls.__name__} or dict, got {type(params)!r}")


def build_builtin(name: str, params=None, **kw) -> FBSDEProblem:
    """Construct one of the built-in coupled systems."""
    if params is None and kw:
        params = kw
    if name == "example36":
        params = dict(params or {})
        sig = params.get("sigma", 1.0)
        x0 = float(params.get("x0", 1.0))
        T = float(params.get("T", 1.0))
        return FBSDEProblem(
            n=1, d=1, T=T, x0=x0,
            b=lambda t, x, y: -y[..., 0],
            sigma=constant_sigma(sig, 1),
            f=[lambda t, x, y, z: x - y[..., 0] - z[..., 0]],
            h=lambda x: np.stack([np.asarray(x, dtype=float)], axis=-1),
            K=1.0, growth_class="lipschitz", name="example36",
            meta={"sigma": float(np.atleast_1d(sig)[0])},
        )
    if name == "lq_control":
        lq = _coerce(params, LQControlParams)
        A, B, C, D, E, F = lq.A, lq.B, lq.C, lq.D, lq.E, lq.F
        G, g1 = lq.G, lq.g1
        K = lq.K if lq.K is not None else lq.lipschitz_estimate()

        def b(t, x, y):
            return A(t) * x + B(t) * (-B(t) * y[..., 0] - D(t)) / F(t)

        def f0(t, x, y, z):
            return A(t) * y[..., 0] + E(t) * x + C(t)

        return FBSDEProblem(
            n=1, d=lq.d, T=lq.T, x0=lq.x0,
            b=b, sigma=constant_sigma(lq.sigma, lq.d), f=[f0],
            h=lambda x: np.stack([G * np.asarray(x, dtype=float) + g1], axis=-1),
            K=K, growth_class="lipschitz", name="lq_control",
            meta={"lq": lq},
        )
    if name == "lq_game":
        gp = _coerce(params, GameParams)
        n = gp.n_players
        K = gp.K if gp.K is not None else gp.lipschitz_estimate()

        def b(t, x, y):
            total = np.asarray(gp.b1(t, x), dtype=float)
            for i in range(n):
                total = total + gp.b2[i](t) * gp.minimizer(t, i, y[..., i])
            return total

        def make_row(i):
            def row(t, x, y, z):
                return np.asarray(gp.b1_x(t, x), dtype=float) * y[..., i] \
                    + gp.c[i](t) + gp.e[i](t) * np.asarray(x, dtype=float)

            return row

        def h(x):
            x = np.asarray(x, dtype=float)
            return np.stack([gp.G[i] * x + gp.g1[i] for i in range(n)], axis=-1)

        return FBSDEProblem(
            n=n, d=gp.d, T=gp.T, x0=gp.x0,
            b=b, sigma=constant_sigma(gp.sigma, gp.d),
            f=[make_row(i) for i in range(n)], h=h,
            K=K, growth_class="lipschitz", name="lq_game",
            meta={"game": gp},
        )
    if name == "delayed_bsde":
        spec = _coerce(params, DelayedBSDESpec)
        g = spec.g
        c = float(spec.xi)

        def f0(t, x, y, z):
            return np.asarray(g(t, -np.asarray(x, dtype=float), z), dtype=float)

        return FBSDEProblem(
            n=1, d=spec.d, T=spec.T, x0=0.0,
            b=lambda t, x, y: -y[..., 0],
            sigma=constant_sigma(np.zeros(spec.d), spec.d),
            f=[f0],
            h=lambda x: np.stack([np.zeros_like(np.asarray(x, dtype=float)) + c], axis=-1),
            K=max(1.0, spec.K), growth_class=spec.growth_class,
            name="delayed_bsde", meta={"delayed": spec},
        )
    raise ValueError(f"unknown builtin {name!r}; choose from {BUILTIN_NAMES}")


def _rk4_backward(rhs, yT: np.ndarray, T: float, steps: int):
    """Integrate y' = rhs(t, y) backward from y(T) = yT; returns (times, values)."""
    times = np.linspace(0.0, T, steps + 1)
    h = T / steps
    vals = np.empty((steps + 1, len(yT)))
    y = np.asarray(yT, dtype=float).copy()
    vals[-1] = y
    for j in range(steps, 0, -1):
        t = times[j]
        k1 = rhs(t, y)
        k2 = rhs(t - 0.5 * h, y - 0.5 * h * k1)
        k3 = rhs(t - 0.5 * h, y - 0.5 * h * k2)
        k4 = rhs(t - h, y - h * k3)
        y = y - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        vals[j - 1] = y
    return times, vals


def oracle(name: str, params=None, steps: int = 4000) -> dict:
    """Closed-form / ODE reference values for the built-ins that have one."""
    if name == "example36":
        params = dict(params or {})
        sig = float(np.atleast_1d(params.get("sigma", 1.0))[0])
        x0 = float(params.get("x0", 1.0))
        T = float(params.get("T", 1.0))

        # affine ansatz Y = P X + phi: Pdot = P^2 + P - 1, phidot = (1+P) phi + P sigma
        def rhs(t, y):
            P, phi = y
            return np.array([P * P + P - 1.0, (1.0 + P) * phi + P * sig])

        times, vals = _rk4_backward(rhs, np.array([1.0, 0.0]), T, steps)
        P, phi = vals[:, 0], vals[:, 1]
        return {
            "times": times, "P": P, "phi": phi,
            "Y0": float(P[0] * x0 + phi[0]),
            "u0": lambda x: P[0] * np.asarray(x, dtype=float) + phi[0],
        }
    if name == "lq_control":
        lq = _coerce(params, LQControlParams)
        A, B, C, D, E, F = lq.A, lq.B, lq.C, lq.D, lq.E, lq.F
        sig2 = float(np.sum(np.atleast_1d(np.asarray(lq.sigma, dtype=float)) ** 2))

        def rhs(t, y):
            P, q, r = y
            dP = (B(t) ** 2 / F(t)) * P * P - 2.0 * A(t) * P - E(t)
            dq = -A(t) * q - C(t) + P * B(t) * (B(t) * q + D(t)) / F(t)
            dr = (B(t) * q + D(t)) ** 2 / (2.0 * F(t)) - 0.5 * sig2 * P
            return np.array([dP, dq, dr])

        times, vals = _rk4_backward(rhs, np.array([lq.G, lq.g1, 0.0]), lq.T, steps)
        P, q, r = vals[:, 0], vals[:, 1], vals[:, 2]
        return {
            "times": times, "P": P, "q": q, "r": r,
            "Y0": float(P[0] * lq.x0 + q[0]),
            "value": float(0.5 * P[0] * lq.x0 ** 2 + q[0] * lq.x0 + r[0]),
        }
    if name == "delayed_bsde_linear":
        params = dict(params or {})
        alpha = float(params.get("alpha", 1.0))
        c = float(params.get("xi", 1.0))
        T = float(params.get("T", 1.0))
        if alpha < 0:
            raise ValueError("linear delayed reference needs alpha >= 0")
        root = math.sqrt(alpha)

        def Y(t):
            return c * np.cosh(root * np.asarray(t, dtype=float)) / math.cosh(root * T)

        return {"Y": Y, "Y0": float(Y(0.0)), "Z": 0.0}
    raise ValueError(f"no closed-form reference for {name!r}")


def _smooth_perturbation(rng: np.random.Generator, times: np.ndarray) -> np.ndarray:
    T = times[-1] if times[-1] > 0 else 1.0
    a = rng.standard_normal(3)
    vals = a[0] + a[1] * np.sin(np.pi * times / T) + a[2] * np.cos(np.pi * times / T)
    peak = np.max(np.abs(vals))
    return vals / peak if peak > 0 else vals


def _simulate_game_costs(
    gp: GameParams,
    field_obj: DecouplingField,
    dW: np.ndarray,
    base_alphas: Optional[np.ndarray] = None,
    dev_player: Optional[int] = None,
    pert: Optional[np.ndarray] = None,
    eps: float = 0.0,
):
    """Controlled-state simulation; returns (costs, alphas).

    By default all controls come from the feedback rule evaluated along
    the simulated state (equilibrium run).  With
    ``base_alphas`` given instead, the recorded control paths are
    replayed open-loop, optionally shifting one player's path by
    eps * pert(t); this keeps the opponents' controls fixed while one
    player deviates, which is the equilibrium property being tested."""
    times = field_obj.times
    dts = np.diff(times)
    n_paths = dW.shape[0]
    n = gp.n_players
    sig = np.atleast_1d(np.asarray(gp.sigma, dtype=float))
    X = np.full(n_paths, gp.x0)
    costs = np.zeros((n_paths, n))
    alphas_out = np.empty((n_paths, len(dts), n))
    for j in range(len(dts)):
        t = float(times[j])
        if base_alphas is not None:
            alphas = base_alphas[:, j, :].copy()
        else:
            u = field_obj.value(t, X)               # (n_paths, n)
            alphas = np.stack(
                [gp.minimizer(t, i, u[:, i]) for i in range(n)], axis=-1
            )
        if dev_player is not None:
            alphas[:, dev_player] += eps * pert[j]
        alphas_out[:, j, :] = alphas
        drift_val = np.asarray(gp.b1(t, X), dtype=float)
        for i in range(n):
            drift_val = drift_val + gp.b2[i](t) * alphas[:, i]
            costs[:, i] += (
                gp.c[i](t) * X
                + gp.d_lin[i](t) * alphas[:, i]
                + 0.5 * gp.e[i](t) * X ** 2
                + 0.5 * gp.phi[i](t) * alphas[:, i] ** 2
            ) * dts[j]
        X = X + drift_val * dts[j] + dW[:, j] @ sig
    for i in range(n):
        costs[:, i] += 0.5 * gp.G[i] * X ** 2 + gp.g1[i] * X
    return costs, alphas_out


def verify_nash(
    p: FBSDEProblem,
    field_obj: DecouplingField,
    n_deviations: int = 10,
    n_paths: int = 10_000,
    seed: int = 0,
    eps_levels: Sequence[float] = (0.05, 0.1, 0.2),
) -> dict:
    """Monte Carlo deviation test of the equilibrium feedback profile.

    Each trial perturbs one player's control path by a smooth bounded
    process while the other players' recorded equilibrium control paths
    are replayed unchanged, under common random numbers; the profile
    passes when no trial lowers the deviating player's cost by more than
    three paired standard errors.
    """
    gp = p.meta.get("game")
    if gp is None:
        raise ValueError("verify_nash requires a problem built by build_builtin('lq_game')")
    times = field_obj.times
    dts = np.diff(times)
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n_paths, len(dts), p.d)) * np.sqrt(dts)[None, :, None]

    eq_costs, eq_alphas = _simulate_game_costs(gp, field_obj, dW)
    trials = []
    all_pass = True
    for i in range(gp.n_players):
        for r in range(n_deviations):
            pert = _smooth_perturbation(rng, times[:-1])
            for eps in eps_levels:
                dev_costs, _ = _simulate_game_costs(
                    gp, field_obj, dW, base_alphas=eq_alphas,
                    dev_player=i, pert=pert, eps=eps,
                )
                diff = dev_costs[:, i] - eq_costs[:, i]
                mean = float(diff.mean())
                se = float(diff.std(ddof=1) / math.sqrt(n_paths))
                ok = mean >= -3.0 * se
                all_pass = all_pass and ok
                trials.append(
                    {"player": i, "deviation": r, "eps": eps,
                     "cost_increase": mean, "stderr": se, "pass": ok}
                )
    ses = eq_costs.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return {
        "pass": bool(all_pass),
        "equilibrium_cost": [float(v) for v in eq_costs.mean(axis=0)],
        "equilibrium_stderr": [float(v) for v in ses],
        "trials": trials,
        "n_paths": n_paths,
        "seed": seed,
    }
