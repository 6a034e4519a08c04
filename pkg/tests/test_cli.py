import json
import subprocess
import sys

import pytest

from fedpois.artifacts import read_csv
from fedpois.cli import main
from fedpois.config import parse_config

TINY = """\
data.num_samples = 1200
data.feature_dim = 6
data.num_clients = 10
model.hidden = 8
fl.num_rounds = 5
fl.sample_prob = 0.5
attack.compromised_fraction = 0.2
attack.trojan_min_benign_ac = 0.5
attack.trojan_min_attack_sr = 0.8
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def test_run_is_byte_deterministic_and_replayable(tmp_path, cfg_file):
    assert main(["run", str(cfg_file), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg_file), "--out", str(tmp_path / "b")]) == 0
    assert main(["run", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c")]) == 0
    for name in ("rounds.csv", "clients.csv", "bounds.csv", "updates.csv", "theta_final.bin", "trojan_X.bin"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["root_seed"] == 0 and len(manifest["files"]) >= 6
    rows = read_csv(tmp_path / "a" / "rounds.csv")
    assert [int(r["round"]) for r in rows] == list(range(6))


def test_stealth_and_plot(tmp_path, cfg_file, capsys):
    out = tmp_path / "run"
    assert main(["run", str(cfg_file), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["stealth", str(out), "--last", "0"]) == 0
    text = capsys.readouterr().out
    assert "angle_welch_p" in text and "three_sigma_any" in text
    assert main(["plot", str(out)]) == 0
    svg = (out / "attack_sr.svg").read_text()
    assert svg.startswith("<svg") and "</svg>" in svg


def test_bounds_table(cfg_file, capsys):
    assert main(["bounds", str(cfg_file)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].startswith("mu,sigma,a,b,num_clients,closed_form,monte_carlo,rel_error")
    assert len(lines) == 4


def test_sweep_writes_grid_and_summary(tmp_path, cfg_file):
    out = tmp_path / "sweep"
    assert main(["sweep", str(cfg_file), "--vary", "alpha=0.5,5", "--seeds", "2", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert names == ["alpha=0.5_seed=0", "alpha=0.5_seed=1", "alpha=5_seed=0", "alpha=5_seed=1"]
    summary = read_csv(out / "summary.csv")
    assert [r["data.alpha"] for r in summary] == ["0.5", "5"]
    assert all(r["n_seeds"] == "2" for r in summary)


def test_exit_codes(tmp_path, cfg_file):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("fl.rounds = 3\n")
    assert main(["run", str(bad)]) == 2
    assert main(["sweep", str(cfg_file), "--vary", "alpha"]) == 2
    assert main(["sweep", str(cfg_file), "--vary", "alpha=-1"]) == 2
    assert main(["plot", str(tmp_path / "nowhere")]) == 3
    assert main(["stealth", str(tmp_path / "nowhere")]) == 3
    assert main([]) == 2


def test_print_defaults_parses_back(capsys):
    assert main(["--print-defaults"]) == 0
    assert parse_config(capsys.readouterr().out) == parse_config("")


def test_module_entry_point(cfg_file):
    proc = subprocess.run([sys.executable, "-m", "fedpois", "bounds", str(cfg_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "closed_form" in proc.stdout
