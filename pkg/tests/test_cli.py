import json

import pytest

from shelvesim.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_spam_is_deterministic_across_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("spam", "--n", 300, "--seed", 5, "--out", a) == 0
    assert run("spam", "--n", 300, "--seed", 5, "--out", b, "--threads", 3) == 0
    assert read_all(a) == read_all(b)
    names = set(read_all(a))
    assert {"records.csv", "records.jsonl", "histograms.csv", "histograms.json",
            "thresholds.json", "report.json", "report.txt", "manifest.json"} <= names


def test_manifest_replay(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("spam", "--n", 200, "--seed", 6, "--out", a) == 0
    assert run("spam", "--config", a / "manifest.json", "--out", b) == 0
    assert read_all(a) == read_all(b)


def test_invalid_config_writes_nothing(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[lasers]\non_935 = true\non_861 = true\n")
    out = tmp_path / "out"
    assert run("spam", "--config", cfg, "--out", out) == 2
    assert not out.exists()


def test_runtime_error_exit_code(tmp_path):
    scan = tmp_path / "scan.csv"
    scan.write_text("scheme,time_s,errors,trials\nnm935,0.05,10,100\n")
    assert run("fit", scan) == 3


def test_scan_fit_pipeline(tmp_path, monkeypatch):
    monkeypatch.setenv("SHELVESIM_SCAN_N_PER_POINT", "2000")
    out = tmp_path / "scan"
    assert run("scan", "--times", "0,0.2,0.3", "--out", out) == 0
    lines = (out / "scan.csv").read_text().splitlines()
    assert len(lines) == 1 + 6
    rows = [dict(zip(lines[0].split(","), line.split(","))) for line in lines[1:]]
    zero = [r for r in rows if r["time_s"] == "0.0"]
    assert all(r["errors"] == r["trials"] for r in zero)
    for r in rows:
        if r["scheme"] == "nm861":
            assert float(r["model_asymptote"]) == 0.0
        else:
            assert float(r["model_asymptote"]) == pytest.approx(8.2352e-5, rel=1e-4)
    assert run("fit", out / "scan.csv", "--out", tmp_path / "fit") == 0
    body = json.loads((tmp_path / "fit" / "fit.json").read_text())
    assert body["A_M1_rad_s"] >= 0


def test_budget_default_and_file(tmp_path):
    assert run("budget", "--out", tmp_path / "b") == 0
    body = json.loads((tmp_path / "b" / "budget.json").read_text())
    assert round(body["predicted_avg_infidelity"] * 1e4, 1) == 2.4
    comp = tmp_path / "c.json"
    comp.write_text(json.dumps([{"name": "x", "value": 1e-4, "applies": "one_only"}]))
    assert run("budget", comp, "--out", tmp_path / "c") == 0
    body = json.loads((tmp_path / "c" / "budget.json").read_text())
    assert body["predicted_avg_inaccuracy"] == pytest.approx(5e-5)
    comp.write_text("[{\"name\": \"x\"}]")
    assert run("budget", comp, "--out", tmp_path / "d") == 2


def test_rb_and_two_ion(tmp_path, monkeypatch):
    monkeypatch.setenv("SHELVESIM_RB_N_SEQS", "20")
    monkeypatch.setenv("SHELVESIM_TWO_ION_N_CYCLES", "5000")
    assert run("rb", "--out", tmp_path / "rb") == 0
    assert (tmp_path / "rb" / "rb.csv").exists()
    assert run("two-ion", "--out", tmp_path / "t") == 0
    body = json.loads((tmp_path / "t" / "two_ion.json").read_text())
    assert body["detection_bins"] == 5000


def test_selftest_passes():
    assert run("selftest") == 0
