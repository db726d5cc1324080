import json

import numpy as np
import pytest

from fbsde_kit.cli import load_config, main
from fbsde_kit.errors import ConfigError


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


SOLVE_CFG = {
    "command": "solve",
    "problem": {"builtin": "example36"},
    "grid": {"nx": 101, "nt_total": 50, "quad": 5},
    "seed": 7,
    "n_paths": 10,
}


def test_load_config_errors(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(bad_json)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {"command": "dance", "problem": {}}))
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {"command": "solve"}))


def test_solve_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path, SOLVE_CFG)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    for name in ("field.csv", "paths.csv", "diagnostics.json", "sandwich.json"):
        assert (out / name).exists(), name
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["sandwich_margin"] >= -1e-2


def test_solve_byte_identical(tmp_path):
    cfg = write_config(tmp_path, SOLVE_CFG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["--config", cfg, "--out-dir", str(out1), "--quiet"]) == 0
    assert main(["--config", cfg, "--out-dir", str(out2), "--quiet"]) == 0
    assert (out1 / "field.csv").read_bytes() == (out2 / "field.csv").read_bytes()
    assert (out1 / "paths.csv").read_bytes() == (out2 / "paths.csv").read_bytes()


def test_seed_flag_changes_paths(tmp_path):
    cfg = write_config(tmp_path, SOLVE_CFG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["--config", cfg, "--out-dir", str(out1), "--quiet"])
    main(["--config", cfg, "--out-dir", str(out2), "--seed", "8", "--quiet"])
    assert (out1 / "field.csv").read_bytes() == (out2 / "field.csv").read_bytes()
    assert (out1 / "paths.csv").read_bytes() != (out2 / "paths.csv").read_bytes()


def test_check_passes_for_builtin(tmp_path):
    cfg = write_config(
        tmp_path, {"command": "check", "problem": {"builtin": "example36"}}
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    report = json.loads((out / "condition_report.json").read_text())
    assert report["pass"]
    assert {r["condition"] for r in report["reports"]} >= {"H", "A1", "M1", "M2", "M3"}


def test_check_violation_exits_2(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "check",
            "problem": {
                "custom": {
                    "n": 1, "d": 1, "T": 1.0, "x0": 1.0, "K": 1.0,
                    "b": "y1",                      # increasing in y: violates M1
                    "sigma": ["1"],
                    "f": ["x - y1 - z11"],
                    "h": ["x"],
                }
            },
        },
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 2
    report = json.loads((out / "condition_report.json").read_text())
    m1 = next(r for r in report["reports"] if r["condition"] == "M1")
    assert m1["verdict"] == "fail"
    assert m1["witness"] is not None


def test_unknown_builtin_exits_1(tmp_path):
    cfg = write_config(
        tmp_path, {"command": "solve", "problem": {"builtin": "nope"}}
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["error"]["code"] == "config_error"


def test_bad_expression_exits_1(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "check",
            "problem": {
                "custom": {
                    "n": 1, "d": 1, "T": 1.0, "x0": 0.0, "K": 1.0,
                    "b": "0", "sigma": ["1"],
                    "f": ["x + qq"],
                    "h": ["x"],
                }
            },
        },
    )
    assert main(["--config", cfg, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 1


def test_nonconvergence_exits_3(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "solve",
            "problem": {
                "custom": {
                    "n": 1, "d": 1, "T": 1.0, "x0": 1.0, "K": 400.0,
                    "b": "0 - y1", "sigma": ["1"],
                    "f": ["400 × x - y1"], "h": ["x"],
                }
            },
            "grid": {"nx": 21, "nt_total": 10, "quad": 3},
        },
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"]["code"] == "non_convergence"


def test_verify_nash_command(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "verify-nash",
            "problem": {"builtin": "lq_game"},
            "grid": {"nx": 51, "nt_total": 20, "quad": 3},
            "n_deviations": 1,
            "n_paths": 500,
            "eps_levels": [0.1],
        },
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    report = json.loads((out / "nash_report.json").read_text())
    assert report["pass"]


def test_verify_nash_wrong_problem_exits_1(tmp_path):
    cfg = write_config(
        tmp_path, {"command": "verify-nash", "problem": {"builtin": "example36"}}
    )
    assert main(["--config", cfg, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 1


def test_convergence_command(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "command": "convergence",
            "problem": {"builtin": "example36"},
            "grid": {"nx": 51, "nt_total": 20, "quad": 5},
        },
    )
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out-dir", str(out), "--quiet"]) == 0
    table = json.loads((out / "convergence.json").read_text())
    assert len(table["levels"]) == 3
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0].startswith("level,nx,nt")
    assert len(lines) == 4


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FBSDE_KIT_THREADS", "junk")
    cfg = write_config(tmp_path, SOLVE_CFG)
    assert main(["--config", cfg, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 1
    monkeypatch.setenv("FBSDE_KIT_THREADS", "1")
    assert main(["--config", cfg, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 0


def test_threads_flag_validation(tmp_path):
    cfg = write_config(tmp_path, SOLVE_CFG)
    assert main(["--config", cfg, "--threads", "0", "--quiet"]) == 1
