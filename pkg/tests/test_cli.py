import subprocess
import sys

import pytest

from derlab import cli
from derlab import verify as V

from test_harness import TINY


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def test_verify_exit_codes(monkeypatch, capsys, tmp_path):
    out = tmp_path / "reports.csv"
    assert cli.main(["verify", "--scale", "0.02", "--csv", str(out)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert out.read_text().startswith("property,trials,failures,worst_margin,seed")
    monkeypatch.setattr(V, "run_suite", lambda seed, scale: [V.PropertyReport("x", 1, 1, -1.0, seed)])
    assert cli.main(["verify"]) == 1


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[defaults]\ngamma = 1.5\n")
    assert cli.main(["run", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["export", str(tmp_path)]) == 2


def test_run_and_export(config, tmp_path, capsys):
    out = tmp_path / "runs"
    assert cli.main(["run", str(config), "--out", str(out)]) == 0
    assert "fzi seed=0" in capsys.readouterr().out
    assert (out / "fzi_seed1.curve.csv").exists() and (out / "config.ini").exists()
    assert cli.main(["export", str(out)]) == 0
    assert "fzi" in capsys.readouterr().out
    assert cli.main(["export", str(out), "--svg"]) == 0
    assert (out / "curves.svg").exists()


def test_sweep_and_ablate(config, tmp_path, capsys):
    assert cli.main(["sweep-eps", str(config), "--eps", "0,1", "--out", str(tmp_path / "s")]) == 0
    assert "spearman" in capsys.readouterr().out
    assert (tmp_path / "s" / "sweep.csv").read_text().startswith("epsilon,seed,auc")
    assert cli.main(["ablate-ac", str(config), "--out", str(tmp_path / "a")]) == 0
    text = capsys.readouterr().out
    assert "AC+VE" in text and "mean_eval_return" in text


def test_bad_eps_list_is_usage_error(config):
    with pytest.raises(SystemExit) as info:
        cli.main(["sweep-eps", str(config), "--eps", "a,b"])
    assert info.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "derlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("verify", "run", "sweep-eps", "ablate-ac", "export"):
        assert name in proc.stdout
