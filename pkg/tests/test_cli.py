import json
import math

import numpy as np
import pytest

import fptmc
from fptmc import cli
from fptmc.model import bm_fpt_density


def _read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return header, rows


def test_estimate_zero_drift_equals_q(tmp_path):
    rc = cli.main(["estimate", "--drift", "0", "--x", "1", "--t-max", "5",
                   "--n", "1000", "--m", "100", "--grid-points", "50",
                   "--seed", "7", "--out-dir", str(tmp_path)])
    assert rc == 0
    header, rows = _read_csv(tmp_path / "density.csv")
    assert header == ["t", "p_hat", "std_err", "lambda_hat"]
    t = rows[:, 0]
    assert np.array_equal(rows[:, 1], bm_fpt_density(1.0, t))
    assert np.all(rows[:, 2] == 0.0)
    assert np.all(rows[:, 3] == 0.0)


def test_estimate_deterministic_across_threads(tmp_path):
    args = ["estimate", "--drift", "-z", "--x", "1", "--t-max", "4",
            "--n", "400", "--m", "100", "--grid-points", "40", "--seed", "9"]
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out-dir", str(d1), "--threads", "1"]) == 0
    assert cli.main(args + ["--out-dir", str(d2), "--threads", "4"]) == 0
    for name in ("density.csv", "rate.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_meta_roundtrip_reproduces_run(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["estimate", "--drift", "-z", "--x", "1", "--t-max", "3",
                     "--n", "300", "--m", "80", "--grid-points", "30",
                     "--seed", "3", "--out-dir", str(d1)]) == 0
    assert cli.main(["estimate", "--config", str(d1 / "meta.json"),
                     "--out-dir", str(d2)]) == 0
    assert (d1 / "density.csv").read_bytes() == (d2 / "density.csv").read_bytes()
    assert (d1 / "meta.json").read_bytes() == (d2 / "meta.json").read_bytes()


def test_estimate_general_spec(tmp_path):
    # dY = (1+Y) dW from 1: transformed drift is -1/2 at x = log 2, whose
    # first-passage law is inverse Gaussian; the CLI must widen the drift
    # table to cover the radii this t grid reaches
    rc = cli.main(["estimate", "--b", "0", "--sigma", "1+z", "--level", "0",
                   "--start", "1", "--t-max", "3", "--n", "100", "--m", "50",
                   "--grid-points", "12", "--seed", "2", "--out-dir", str(tmp_path)])
    assert rc == 0
    _, rows = _read_csv(tmp_path / "density.csv")
    t, p = rows[:, 0], rows[:, 1]
    x = math.log(2.0)
    ig = x / np.sqrt(2 * np.pi * t**3) * np.exp(-((x - t / 2.0) ** 2) / (2 * t))
    assert np.max(np.abs(p - ig) / ig) < 1e-9
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["general"]["sigma"] == "1+z"
    assert meta["drift"] is None


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"drift": "0", "x": 1.0, "t_max": 5.0,
                               "grid_points": 10, "N": 100, "M": 20, "seed": 1}))
    out = tmp_path / "out"
    assert cli.main(["estimate", "--config", str(cfg), "--grid-points", "17",
                     "--out-dir", str(out)]) == 0
    _, rows = _read_csv(out / "density.csv")
    assert len(rows) == 17
    meta = json.loads((out / "meta.json").read_text())
    assert meta["grid_points"] == 17


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("FPTMC_GRID_POINTS", "13")
    out = tmp_path / "out"
    assert cli.main(["estimate", "--drift", "0", "--x", "1", "--t-max", "2",
                     "--n", "50", "--m", "20", "--seed", "1",
                     "--out-dir", str(out)]) == 0
    _, rows = _read_csv(out / "density.csv")
    assert len(rows) == 13


def test_config_error_exit_code(tmp_path, capsys):
    rc = cli.main(["estimate", "--drift", "z +* 2", "--x", "1",
                   "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_both_model_forms_rejected(tmp_path):
    rc = cli.main(["estimate", "--drift", "0", "--x", "1", "--b", "0",
                   "--sigma", "1", "--start", "1", "--out-dir", str(tmp_path)])
    assert rc == 1


def test_numeric_failure_exit_code(tmp_path):
    # mesh far too coarse for a wide domain: eigenvalue solve cannot converge
    rc = cli.main(["tail", "--drift", "-z", "--x", "1", "--t-max", "8",
                   "--grid-points", "40", "--n", "200", "--m", "50", "--seed", "2",
                   "--tail-enabled", "--domain-n", "32", "--mesh", "100",
                   "--out-dir", str(tmp_path)])
    assert rc == 2


def test_tail_outputs(tmp_path):
    rc = cli.main(["tail", "--drift", "-z", "--x", "1", "--t-max", "8",
                   "--grid-points", "40", "--n", "400", "--m", "100", "--seed", "2",
                   "--tail-enabled", "--splice-t", "6.0", "--domain-n", "8",
                   "--mesh", "1000", "--out-dir", str(tmp_path)])
    assert rc == 0
    eigen = json.loads((tmp_path / "eigen.json").read_text())
    assert [row["n"] for row in eigen["ladder"]] == [8.0, 16.0, 32.0]
    assert eigen["ladder"][0]["mu1"] == pytest.approx(1.0, abs=1e-3)
    assert eigen["T"] == 6.0
    header, rows = _read_csv(tmp_path / "density_mixture.csv")
    assert header == ["t", "p_mixture"]
    assert len(rows) == 80  # grid extended past t_max
    t, p = rows[:, 0], rows[:, 1]
    # continuous at the splice point: tail branch equals the estimate there
    idx = int(np.argmin(np.abs(t - 6.0)))
    lam, cstar = eigen["lambda"], eigen["c_star"]
    assert p[idx] == pytest.approx(cstar * bm_fpt_density(1.0, 6.0) * math.exp(-6 * lam),
                                   rel=1e-12)
    assert np.all(p > 0)


def test_compare_outputs(tmp_path):
    rc = cli.main(["compare", "--drift", "-z", "--x", "1", "--t-max", "4",
                   "--n", "400", "--m", "100", "--seed", "3",
                   "--baseline-enabled", "--h", "0.02", "--n-euler", "4000",
                   "--out-dir", str(tmp_path)])
    assert rc == 0
    report = json.loads((tmp_path / "compare.json").read_text())
    methods = [row["method"] for row in report]
    assert methods[0] == "direct"
    assert any("euler" in m for m in methods)
    header, rows = _read_csv(tmp_path / "euler_cdf.csv")
    assert header == ["t", "cdf_hat"]
    assert np.all(np.diff(rows[:, 1]) >= 0.0)
    header, _ = _read_csv(tmp_path / "euler_kde.csv")
    assert header == ["t", "kde_hat"]
    meta = json.loads((tmp_path / "euler_meta.json").read_text())
    assert set(meta) == {"h", "N_e", "correction", "bandwidth"}


def test_compare_requires_oracle(tmp_path):
    rc = cli.main(["compare", "--drift", "exp(-z)", "--x", "1",
                   "--baseline-enabled", "--out-dir", str(tmp_path)])
    assert rc == 1


def test_lamperti_prints_symbolic(capsys):
    rc = cli.main(["lamperti", "--b", "-z", "--sigma", "1", "--level", "0",
                   "--start", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "x = 1" in out
    assert "a(z) = -z" in out


def test_lamperti_table_output(tmp_path, capsys):
    table = tmp_path / "a.csv"
    rc = cli.main(["lamperti", "--b", "0", "--sigma", "1+z", "--level", "0",
                   "--start", "1", "--table-out", str(table)])
    assert rc == 0
    out = capsys.readouterr().out
    assert f"x = {math.log(2.0):.17g}"[:12] in out
    header, rows = _read_csv(table)
    assert header == ["z", "a"]
    assert np.max(np.abs(rows[:, 1] + 0.5)) < 1e-7


def test_validate_zero_check(tmp_path, capsys):
    rc = cli.main(["validate", "--checks", "zero", "--seed", "4",
                   "--out-dir", str(tmp_path)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_unknown_check(tmp_path):
    assert cli.main(["validate", "--checks", "nope", "--out-dir", str(tmp_path)]) == 1


def test_validate_failure_exit_code(monkeypatch, tmp_path, capsys):
    def failing(run):
        return False, "always fails", "stub"

    monkeypatch.setitem(cli._VALIDATE_CHECKS, "stub", failing)
    rc = cli.main(["validate", "--checks", "stub", "--out-dir", str(tmp_path)])
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out


def test_csv_line_endings_and_encoding(tmp_path):
    assert cli.main(["estimate", "--drift", "0", "--x", "1", "--t-max", "1",
                     "--n", "10", "--m", "10", "--grid-points", "5",
                     "--seed", "1", "--out-dir", str(tmp_path)]) == 0
    raw = (tmp_path / "density.csv").read_bytes()
    assert b"\r" not in raw
    raw.decode("utf-8")
