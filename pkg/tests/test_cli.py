import csv
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from missarf import read_csv
from missarf.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def sim_csv(tmp_path):
    out = tmp_path / "sim.csv"
    assert run("simulate", "--n", 120, "--p", 4, "--seed", 1, "--out", out) == 0
    return out


@pytest.fixture
def amputed_csv(tmp_path, sim_csv):
    out = tmp_path / "na.csv"
    assert run("ampute", sim_csv, "--exclude", "y", "--proportion", 0.2, "--seed", 2, "--out", out) == 0
    return out


def test_version(capsys):
    assert run("--version") == 0
    assert capsys.readouterr().out.strip() == "missarf 0.1.0 (model format 1)"


def test_help_lists_defaults(capsys):
    assert run("impute", "--help") == 0
    text = capsys.readouterr().out
    options = text[text.index("options:"):]
    for flag, default in (("--trees", "100"), ("--min-node-size", "10"), ("--m", "20"), ("--delta", "0.0")):
        entry = re.search(rf"\n  {flag}\b.*?(?=\n  -)", options, re.S)
        assert entry and f": {default})" in entry.group(0), flag


def test_simulate_is_seeded(tmp_path, sim_csv):
    other = tmp_path / "again.csv"
    run("simulate", "--n", 120, "--p", 4, "--seed", 1, "--out", other)
    assert other.read_bytes() == sim_csv.read_bytes()
    header = sim_csv.read_text().splitlines()[0]
    assert header == "x1,x2,x3,x4,y"


def test_ampute_targets_first_half(amputed_csv):
    d = read_csv(amputed_csv)
    miss = np.isnan(d.values)
    assert miss[:, :2].sum(axis=0).tolist() == [24, 24]
    assert not miss[:, 2:].any()


def test_impute_multiple_writes_m_files(tmp_path, amputed_csv):
    prefix = tmp_path / "imp"
    rc = run("impute", amputed_csv, "--m", 20, "--trees", 10, "--seed", 3, "--exclude", "y",
             "--out", prefix)
    assert rc == 0
    files = sorted(tmp_path.glob("imp_*.csv"))
    assert len(files) == 20
    src = read_csv(amputed_csv)
    obs = ~np.isnan(src.values)
    for f in files:
        d = read_csv(f)
        assert not np.isnan(d.values).any()
        assert np.array_equal(d.values[obs], src.values[obs])
    prov = (tmp_path / "imp.provenance.txt").read_text()
    assert "seed=3" in prov and "model_fingerprint=" in prov


def test_impute_is_deterministic(tmp_path, amputed_csv):
    for name in ("a", "b"):
        assert run("impute", amputed_csv, "--trees", 10, "--seed", 5, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert run("impute", amputed_csv, "--trees", 10, "--seed", 5, "--threads", 1,
               "--out", tmp_path / "c") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_complete_input_single_is_identity(tmp_path, sim_csv):
    assert run("impute", sim_csv, "--single", "--trees", 5, "--seed", 1, "--out", tmp_path / "same") == 0
    assert (tmp_path / "same.csv").read_bytes() == sim_csv.read_bytes()


def test_fit_then_logprob(tmp_path, sim_csv, capsys):
    model = tmp_path / "m.npz"
    assert run("fit", sim_csv, "--trees", 10, "--seed", 1, "--out", model) == 0
    capsys.readouterr()
    assert run("logprob", model, sim_csv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 120
    assert all("e" in v and np.isfinite(float(v)) for v in lines)
    assert len(lines[0].split("e")[0].replace("-", "").replace(".", "")) == 17


def test_logprob_missing_cell_is_data_error(tmp_path, sim_csv, amputed_csv, capsys):
    model = tmp_path / "m.npz"
    run("fit", sim_csv, "--trees", 5, "--seed", 1, "--out", model)
    assert run("logprob", model, amputed_csv) == 3
    assert "missing" in capsys.readouterr().err


def test_usage_and_data_exit_codes(tmp_path, sim_csv, capsys):
    assert run("impute") == 2
    assert run("impute", tmp_path / "nope.csv", "--out", tmp_path / "o") == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3\n")
    assert run("impute", bad, "--out", tmp_path / "o") == 3
    assert run("simulate", "--n", 5, "--p", 3, "--out", tmp_path / "s.csv") == 2
    assert run("ampute", sim_csv, "--proportion", 1.5, "--out", tmp_path / "o.csv") == 2


def test_benchmark_smoke(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert run("benchmark", CONFIGS / "smoke.toml", "--out", out, "--replicates", 1) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["n", "p", "marginal", "effect", "mechanism", "proportion", "method", "m",
                       "replicate", "metric", "feature", "value", "status", "wall_ms"]
    assert len(rows) > 1
    assert "done" in capsys.readouterr().err
    again = tmp_path / "r2.csv"
    assert run("benchmark", CONFIGS / "smoke.toml", "--out", again, "--replicates", 1) == 0
    assert again.read_bytes() == out.read_bytes()


def test_malformed_config_names_line(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[sim]\nn = 100\nmarginal = \"cauchy\"\n")
    assert run("benchmark", cfg, "--out", tmp_path / "r.csv") == 2
    assert "bad.toml:3" in capsys.readouterr().err
    cfg.write_text("[sim]\nn = 100\n[bench]\nreplicates = 2\n")
    assert run("benchmark", cfg, "--out", tmp_path / "r.csv") == 2
    assert "bad.toml:3" in capsys.readouterr().err
    cfg.write_text("[sim\n")
    assert run("benchmark", cfg, "--out", tmp_path / "r.csv") == 2


def test_config_file_sets_defaults_and_flags_win(tmp_path, amputed_csv, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[impute]\ntrees = 7\nseed = 11\n")
    assert run("impute", amputed_csv, "--config", cfg, "--trees", 9, "--print-config",
               "--out", tmp_path / "o") == 0
    err = capsys.readouterr().err
    assert '"trees": 9' in err and '"seed": 11' in err


def test_evaluate(tmp_path, sim_csv, amputed_csv, capsys):
    prefix = tmp_path / "imp"
    run("impute", amputed_csv, "--m", 3, "--trees", 5, "--seed", 1, "--exclude", "y", "--out", prefix)
    capsys.readouterr()
    files = sorted(tmp_path.glob("imp_*.csv"))
    assert run("evaluate", "--truth", sim_csv, "--imputed", *files, "--outcome", "y", "--true-beta") == 0
    out = capsys.readouterr().out
    assert out.startswith("metric,feature,value")
    assert "nrmse" in out and "covered" in out


def test_module_entry_point_exit_code(tmp_path):
    res = subprocess.run([sys.executable, "-m", "missarf.cli", "logprob", str(tmp_path / "none.npz"),
                          str(tmp_path / "none.csv")], capture_output=True, text=True)
    assert res.returncode == 3
    assert res.stderr.startswith("data error")
