"""Acceptance gate: the ten headline criteria, one pass/fail line each.

Each test prints "[PASS] criterion N: ..." on success; a failing assert
surfaces as the usual pytest failure for that criterion.
"""

import math
import time

import numpy as np
import pytest

import fbsde_kit as fk
from fbsde_kit.cli import main as cli_main
from fbsde_kit.local_solver import GridSpec

REF = {"nx": 401, "nt_total": 400, "quad": 7}


def _timed_build(p, **kw):
    t0 = time.perf_counter()
    field, diag = fk.build_decoupling_field(p, **kw)
    return field, diag, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ref_fields():
    """Reference-resolution fields for every built-in, with build times."""
    out = {}
    for name in fk.BUILTIN_NAMES:
        p = fk.build_builtin(name)
        field, diag, secs = _timed_build(p, **REF)
        out[name] = (p, field, diag, secs)
    return out


def test_criterion_1_envelope_bound_sweep():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2026)
    violations = 0
    for _ in range(200):
        K = float(rng.uniform(0.0, 3.0))
        n = int(rng.integers(1, 5))
        T = float(rng.uniform(1e-3, 2.0))
        env = fk.integrate_envelope(K, n, T, steps=256)
        ok = (
            np.all(env.values >= 0.0)
            and np.all(np.diff(env.values, axis=0) <= 1e-12)
            and env.values.max(initial=0.0) <= env.cap * (1 + 1e-12)
        )
        violations += 0 if ok else 1
    elapsed = time.perf_counter() - t0
    print(
        f"[{'PASS' if violations == 0 and elapsed < 5 else 'FAIL'}] criterion 1: "
        f"envelope bound, 200 random (K, n, T), {violations} violations, {elapsed:.2f}s"
    )
    assert violations == 0
    assert elapsed < 5.0


def test_criterion_2_envelope_closed_form():
    t0 = time.perf_counter()
    env = fk.integrate_envelope(1.0, 1, 1.0, steps=10_000)
    exact = 1.5 * math.e ** 2 - 0.5
    rel = abs(env.values[0, 0] - exact) / exact
    elapsed = time.perf_counter() - t0
    print(
        f"[{'PASS' if rel <= 1e-8 and elapsed < 1 else 'FAIL'}] criterion 2: "
        f"closed-form envelope, rel err {rel:.2e}, {elapsed:.2f}s"
    )
    assert rel <= 1e-8
    assert elapsed < 1.0


def test_criterion_3_linear_example_vs_riccati(ref_fields):
    p, field, _, build_secs = ref_fields["example36"]
    t0 = time.perf_counter()
    ora = fk.oracle("example36", steps=20_000)
    y0 = field.value(0.0, np.array([p.x0]))[0, 0]
    err_ref = abs(y0 - ora["Y0"]) / (1 + abs(ora["Y0"]))
    field2, _, secs2 = _timed_build(p, nx=801, nt_total=800, quad=7)
    y0_fine = field2.value(0.0, np.array([p.x0]))[0, 0]
    err_fine = abs(y0_fine - ora["Y0"]) / (1 + abs(ora["Y0"]))
    shrink = err_ref / err_fine
    elapsed = time.perf_counter() - t0 + build_secs
    ok = err_ref <= 0.02 and shrink >= 1.7 and elapsed < 60
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 3: linear example rel err "
        f"{err_ref:.2e} (limit 2e-2), refinement shrink {shrink:.2f}x, {elapsed:.1f}s"
    )
    assert err_ref <= 0.02
    assert shrink >= 1.7
    assert elapsed < 60.0


def test_criterion_4_sandwich_all_builtins(ref_fields):
    worst = math.inf
    for name, (p, field, _, _) in ref_fields.items():
        reports = fk.check_monotonicity(p, N=2000)
        assert all(r.passed for r in reports), name
        rep = fk.verify_sandwich(field, field.env, eps_slope=1e-2)
        worst = min(worst, rep["margin"])
        assert rep["pass"], (name, rep)
    print(
        f"[PASS] criterion 4: sandwich bounds hold for all built-ins, "
        f"worst margin {worst:.2e}"
    )


def test_criterion_5_checkers_and_sign_flip():
    p = fk.build_builtin("example36")
    t0 = time.perf_counter()
    reports = fk.check_structural(p, N=100_000, seed=0)
    reports += fk.check_monotonicity(p, N=100_000, seed=0)
    pw = fk.check_peng_wu(G=1.0, N=100_000, seed=0)
    elapsed = time.perf_counter() - t0
    names = {r.condition for r in reports}
    all_pass = all(r.passed for r in reports)
    flip = pw.verdict == "fail" and pw.witness is not None
    ok = all_pass and flip and names >= {"H", "A1", "M1", "M2", "M3"} and elapsed < 10
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 5: condition checkers on 1e5 "
        f"samples ({elapsed:.2f}s), sign-flip witness found: {flip}"
    )
    assert names >= {"H", "A1", "M1", "M2", "M3"}
    assert all_pass
    assert flip
    assert elapsed < 10.0


def test_criterion_6_lq_control(ref_fields):
    p, field, _, build_secs = ref_fields["lq_control"]
    t0 = time.perf_counter()
    lq = p.meta["lq"]
    ora = fk.oracle("lq_control", lq)
    y0 = field.value(0.0, np.array([lq.x0]))[0, 0]
    rel = abs(y0 - ora["Y0"]) / (1 + abs(ora["Y0"]))

    paths, _ = fk.simulate_forward(p, field, n_paths=1000, seed=0)
    foc = 0.0
    for path in paths:
        ts = path.times[:-1]
        B = np.array([lq.B(t) for t in ts])
        D = np.array([lq.D(t) for t in ts])
        F = np.array([lq.F(t) for t in ts])
        Y = path.Y[:-1, 0]
        u_hat = (-B * Y - D) / F
        foc = max(foc, float(np.max(np.abs(B * Y + D + F * u_hat))))
    elapsed = time.perf_counter() - t0 + build_secs
    ok = rel <= 0.02 and foc <= 1e-10 and elapsed < 90
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 6: LQ control rel err {rel:.2e}, "
        f"first-order-condition residual {foc:.1e} over 1000 paths, {elapsed:.1f}s"
    )
    assert rel <= 0.02
    assert foc <= 1e-10
    assert elapsed < 90.0


def test_criterion_7_delayed_bsde(ref_fields):
    p, field, _, build_secs = ref_fields["delayed_bsde"]
    t0 = time.perf_counter()
    ora = fk.oracle("delayed_bsde_linear", {"alpha": 1.0, "xi": 1.0, "T": 1.0})
    y0 = field.value(0.0, np.array([0.0]))[0, 0]
    rel = abs(y0 - ora["Y0"]) / (1 + abs(ora["Y0"]))

    paths, _ = fk.simulate_forward(p, field, n_paths=10, seed=0)
    dt = float(np.max(np.diff(field.times)))
    worst = 0.0
    for path in paths:
        dts = np.diff(path.times)
        running = np.concatenate([[0.0], np.cumsum(path.Y[:-1, 0] * dts)])
        worst = max(worst, float(np.max(np.abs(path.X + running))))
    elapsed = time.perf_counter() - t0 + build_secs
    ok = rel <= 0.01 and worst <= 10 * dt and elapsed < 60
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 7: delayed value process rel err "
        f"{rel:.2e} vs 1/cosh(1), transform residual {worst:.1e} "
        f"(O(dt) bound {10 * dt:.1e}), {elapsed:.1f}s"
    )
    assert rel <= 0.01
    assert worst <= 10 * dt
    assert elapsed < 60.0


def test_criterion_8_nash_verification(ref_fields):
    p, field, _, build_secs = ref_fields["lq_game"]
    t0 = time.perf_counter()
    rep = fk.verify_nash(
        p, field, n_deviations=10, n_paths=10_000, seed=0,
        eps_levels=(0.05, 0.1, 0.2),
    )
    assert len(rep["trials"]) == 2 * 10 * 3

    # single-player reduction against the control value reference
    gp1 = fk.GameParams(
        n_players=1, b2=(1.0,), c=(0.0,), d_lin=(0.0,), e=(1.0,),
        phi=(1.0,), G=(1.0,), g1=(0.0,),
    )
    p1 = fk.build_builtin("lq_game", gp1)
    f1, _ = fk.build_decoupling_field(p1, nx=201, nt_total=200, quad=7)
    rep1 = fk.verify_nash(p1, f1, n_deviations=2, n_paths=10_000, seed=1)
    value = fk.oracle(
        "lq_control", fk.LQControlParams(A=0.0, B=1.0, E=1.0, F=1.0, G=1.0)
    )["value"]
    gap = abs(rep1["equilibrium_cost"][0] - value)
    mc_ok = gap <= 3.0 * rep1["equilibrium_stderr"][0]
    elapsed = time.perf_counter() - t0 + build_secs
    ok = rep["pass"] and rep1["pass"] and mc_ok and elapsed < 300
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 8: Nash deviations (60 trials) "
        f"pass={rep['pass']}, single-player value gap {gap:.3f} "
        f"<= 3 x stderr {rep1['equilibrium_stderr'][0]:.3f}: {mc_ok}, {elapsed:.1f}s"
    )
    assert rep["pass"]
    assert rep1["pass"]
    assert mc_ok
    assert elapsed < 300.0


def test_criterion_9_comparison_property():
    import dataclasses

    p = fk.build_builtin("example36")
    raised = dataclasses.replace(
        p, h=lambda x: np.stack([np.asarray(x, float) + 0.1], axis=-1)
    )
    base, _ = fk.build_decoupling_field(p, nx=201, nt_total=200, quad=7)
    high, _ = fk.build_decoupling_field(raised, nx=201, nt_total=200, quad=7)
    gap = high.u[0] - base.u[0]
    worst = float(gap.min())
    print(
        f"[{'PASS' if worst > -1e-8 else 'FAIL'}] criterion 9: raising the "
        f"terminal by 0.1 raises u(0, .) everywhere (worst drop {worst:.2e})"
    )
    assert worst > -1e-8


def test_criterion_10_determinism(tmp_path):
    import json

    cfg = {
        "command": "solve",
        "problem": {"builtin": "example36"},
        "grid": {"nx": 101, "nt_total": 50, "quad": 5},
        "seed": 11,
        "n_paths": 25,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli_main(["--config", str(cfg_path), "--out-dir", str(out1), "--quiet"]) == 0
    assert cli_main(["--config", str(cfg_path), "--out-dir", str(out2), "--quiet"]) == 0
    identical = (
        (out1 / "field.csv").read_bytes() == (out2 / "field.csv").read_bytes()
        and (out1 / "paths.csv").read_bytes() == (out2 / "paths.csv").read_bytes()
    )

    p = fk.build_builtin("example36")
    env = fk.integrate_envelope(p.K, p.n, p.T, steps=512)
    grid = GridSpec(x_min=-4.0, x_max=5.0, nx=201, nt_per_subinterval=100, quad=7)
    term = lambda xq: np.stack([np.asarray(xq, float)], axis=-1)
    a = fk.picard_solve_subinterval(p, term, 0.0, p.T, grid, env)
    b = fk.picard_solve_subinterval(
        p, term, 0.0, p.T, grid, env,
        initial_guess=lambda xq: np.zeros(np.shape(xq) + (1,)),
    )
    ya = fk.interpolate_field(a, 0.0, np.array([p.x0]), env)[0, 0]
    yb = fk.interpolate_field(b, 0.0, np.array([p.x0]), env)[0, 0]
    guess_gap = abs(ya - yb)
    ok = identical and guess_gap < 1e-6
    print(
        f"[{'PASS' if ok else 'FAIL'}] criterion 10: byte-identical CSVs: "
        f"{identical}; Picard initial-guess gap {guess_gap:.2e} < 1e-6"
    )
    assert identical
    assert guess_gap < 1e-6
