import csv
import json

import pytest

from branchbsde.cli import main

TOY_QUICK = {"benchmark": "toy",
             "scheme": {"n_steps": 10, "tol": 0.01, "cap": 512, "batch": 128, "euler_dt": 0.01}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_toy_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, TOY_QUICK), "--out", str(out), "--workers", "1"]) == 0
    assert "max_abs_error=" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["bounds"]["h_o"] > 0.1
    assert len(manifest["step_seconds"]) == 10
    rows = list(csv.reader(open(out / "errors.csv")))
    assert rows[0] == ["node", "estimate", "reference", "abs_error", "pct_error", "std_err", "cap_hit"]
    assert len(rows) == 8
    assert len(list(out.glob("grid_t*.csv"))) == 11


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, TOY_QUICK)
    main(["run", cfg, "--out", str(tmp_path / "a"), "--workers", "1"])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--workers", "3"])
    for name in ["errors.csv", "grid_t000.csv", "grid_t005.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gate_refusal_names_h_and_h_o(tmp_path, capsys):
    cfg = dict(TOY_QUICK, scheme=dict(TOY_QUICK["scheme"], n_steps=2))
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "h=0.5" in err and "h_o=" in err
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o"),
                 "--allow-horizon-override", "--workers", "1"]) == 0


@pytest.mark.parametrize("cfg", [
    {"benchmark": "nope"},
    {"benchmark": "toy", "scheme": {"n_steps": "ten"}},
    {"benchmark": "toy", "scheme": {"bogus": 1}},
    {"benchmark": "toy", "extra": 1},
    {"benchmark": "toy", "sweep": {"method": ["A"]}},
    {"problem": {"lower": [0]}},
])
def test_config_errors(tmp_path, cfg, capsys):
    assert main(["run", write(tmp_path, cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_overflow_exit(tmp_path):
    cfg = {"benchmark": "toy", "scheme": {"n_steps": 10, "tol": 0.01, "cap": 512, "batch": 128,
                                          "euler_dt": 0.01, "node_cap": 1}}
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 4


def test_inline_problem(tmp_path, capsys):
    cfg = {"name": "quad", "problem": {
        "lower": [-1.0], "upper": [1.0], "drift": "0.0 * x", "vol": "0.0 * x[:, 0]",
        "terminal": "0.5 + 0.0 * x[:, 0]", "driver": "y ** 2", "bound": 1.0, "horizon": 0.1,
        "reference": "1.0 / (2.0 - (0.1 - t)) + 0.0 * x[:, 0]"},
        "scheme": {"n_steps": 2, "grid_step": 1.0, "n_pieces": 1, "tol": 0.002, "cap": 20000}}
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "errors.csv")))
    for r in rows:
        assert float(r["abs_error"]) <= 3 * float(r["std_err"]) * 2 ** 0.5 + 1e-3


def test_sweep_writes_table(tmp_path, monkeypatch):
    monkeypatch.setenv("BRANCHBSDE_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = dict(TOY_QUICK, sweep={"n_steps": [10, 20]})
    assert main(["run", write(tmp_path, cfg, "sw.json"), "--workers", "1"]) == 0
    rows = list(csv.reader(open(tmp_path / "root" / "sw" / "sweep.csv")))
    assert [r[0] for r in rows[1:]] == ["10", "20"]


def test_bounds_and_list(capsys):
    assert main(["bounds", "--C", "1", "--degree", "2", "--M", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["h_o"] == pytest.approx(1 / 6) and out["M_h_o"] == pytest.approx(3.0)
    assert main(["list"]) == 0
    assert "toy" in capsys.readouterr().out.split()
