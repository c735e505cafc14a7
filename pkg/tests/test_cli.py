import csv
import json
import subprocess
import sys

import pytest

from harnack_lab.cli import main


def write(tmp_path, body, name="c.toml"):
    p = tmp_path / name
    p.write_text('[run]\nname = "t"\nseed = 3\n[model]\nn = 8\nspectrum = "dirichlet"\nalpha = 0.5\n'
                 'beta = 1.0\n' + body)
    return str(p)


def test_empty_check_list(tmp_path):
    cfg = write(tmp_path, '[drift]\nkind = "zero"\n')
    assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "report.json").read_text())
    assert doc["checks"] == []
    assert (tmp_path / "o" / "summary.csv").read_text().strip() == "id,lhs,rhs,factor,margin,ci,verdict"


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, '[drift]\nkind = "zero"\nzeta_q = 1.0\n')
    assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    assert "drift.zeta_q" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_runtime_error_exits_3(tmp_path, capsys):
    cfg = write(tmp_path, '[drift]\nkind = "cubic"\nkappa = 1.0\nzeta_F = 0.5\n'
                          '[observables.c]\nkind = "cosine"\nmodes = [1]\n'
                          '[checks.h]\ntype = "harnack_lipschitz"\nobservable = "c"\nt = 0.5\nM = 1000\n')
    assert main(["run", cfg, "--out-dir", str(tmp_path / "o")]) == 3
    assert "runtime error" in capsys.readouterr().err


def test_outputs_and_plot_files(tmp_path, capsys):
    cfg = write(tmp_path, '[drift]\nkind = "zero"\n[observables.q]\nkind = "quadratic"\nmodes = [1]\n'
                          '[observables.c]\nkind = "cosine"\nmodes = [1]\nweights = [10.0]\n'
                          '[checks.gen]\ntype = "generator"\nobservable = "q"\ndts = [0.1, 0.05, 0.025, 0.0125]\n'
                          'M0 = 1000.0\n'
                          '[checks.hl]\ntype = "harnack_lipschitz"\nobservable = "c"\nt = [0.25, 1.0]\n'
                          'h_cm = 1.0\nM = 20000\n')
    out = tmp_path / "o"
    assert main(["run", cfg, "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert [r["id"] for r in rows] == sorted(r["id"] for r in rows)
    assert len(rows) == 3
    for r in rows:
        assert float(r["margin"]) + float(r["lhs"]) == pytest.approx(float(r["rhs"]) * float(r["factor"]))
    assert list((out / "plots").glob("*.csv"))
    assert "3 PASS" in capsys.readouterr().out


def test_exponent_scale_witness_fails(tmp_path):
    # the bundled composed witness alone, with the factor exponent divided by 100
    from harnack_lab.config import bundled_config
    text = bundled_config("composed").read_text()
    start = text.index("[checks.witness]")
    end = text.find("[checks.", start + 1)
    head = text[:text.index("[checks.")]
    cfg = tmp_path / "w.toml"
    cfg.write_text(head + text[start:end if end > 0 else None])
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--exponent-scale", "0.01"]) == 1


def test_list_checks(capsys):
    assert main(["list-checks"]) == 0
    out = capsys.readouterr().out
    assert "harnack_dissipative" in out and "generator" in out


def test_oracle_ou(capsys):
    assert main(["oracle", "ou", "--t", "0.25", "1", "--x", "0.3"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["t"] for r in rows] == [0.25, 1.0]
    assert rows[0]["invariant_variance"] == pytest.approx(rows[0]["c_k"] / (2 * rows[0]["a_k"]))
    assert main(["oracle", "ou", "--t", "1", "--mode", "99"]) == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "harnack_lab.cli", "list-checks"], capture_output=True,
                         text=True, check=True)
    assert "ou_oracle" in out.stdout
