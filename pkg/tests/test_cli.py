import subprocess
import sys

import numpy as np
import pytest

from hdmrflow.cli import main

SMALL_YAML = """\
fine: [12, 12]
coarse: [3, 3]
n_terms: 4
corr_x: 0.2
corr_y: 0.2
zeta: 0.7
t_end_pvi: 0.2
dt_pvi: 0.02
snapshot_pvi: [0.1, 0.2]
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_YAML)
    return path


def test_counts_table(capsys):
    assert main(["counts", "--n", "80", "--j", "31", "--level", "2"]) == 0
    out = capsys.readouterr().out
    for value in ("12961", "6446", "2231", "41480"):
        assert value in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hdmrflow", "counts", "--n", "4", "--j", "2"],
                         capture_output=True, text=True, check=True)
    assert "hybrid HDMR" in res.stdout


def test_bad_config_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("fine: [12, 12]\nlevle: 2\n")
    assert main(["run", "-c", str(path)]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:2" in err and "levle" in err


def test_bad_override(cfg, capsys):
    assert main(["run", "-c", str(cfg), "--set", "zeta"]) == 2
    assert main(["run", "-c", str(cfg), "--set", "zeta=2.0"]) == 2


def test_missing_stats_directory(tmp_path):
    assert main(["stats", str(tmp_path / "nowhere")]) == 1


def test_run_stats_compare(cfg, tmp_path, capsys):
    cache = str(tmp_path / "cache")
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", "-c", str(cfg), "--cache-dir", cache, "--method", "MFEM-full",
                 "--output-dir", out_a]) == 0
    assert main(["run", "-c", str(cfg), "--cache-dir", cache, "--method", "L-MMsFEM-hybrid",
                 "--output-dir", out_b]) == 0
    capsys.readouterr()
    assert main(["stats", out_a]) == 0
    assert "model_solves: 41" in capsys.readouterr().out

    assert main(["compare", out_a, out_a, "--out", str(tmp_path / "same.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(float(line.split()[1]) == 0.0 for line in lines if not line.startswith("pvi"))
    assert main(["compare", out_a, out_b, "--pvi", "0.1"]) == 0
    errs = {l.split()[0]: float(l.split()[1]) for l in capsys.readouterr().out.splitlines()}
    assert errs["pvi"] == 0.1 and 0 < errs["E_m(S)"] < 1


def test_kle_and_sensitivity(cfg, tmp_path, capsys):
    cache = str(tmp_path / "cache")
    kle = tmp_path / "kle.npz"
    assert main(["kle", "-c", str(cfg), "--cache-dir", cache, "--out", str(kle)]) == 0
    assert "4 terms" in capsys.readouterr().out
    with np.load(kle) as data:
        assert len(data["eigenvalues"]) == 4
    sens = tmp_path / "sens.csv"
    assert main(["sensitivity", "-c", str(cfg), "--cache-dir", cache, "--out", str(sens)]) == 0
    rows = sens.read_text().splitlines()
    assert rows[0].startswith("rank,dim") and len(rows) == 5
