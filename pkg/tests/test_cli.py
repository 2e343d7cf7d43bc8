"""Subcommands, exit codes, config rejection, determinism and restart."""
from pathlib import Path

import pytest

from chemokin.cli import main
from chemokin.config import parse_config
from chemokin.errors import BadConfig

SMALL_CONFIG = """\
[grid]
x_nodes = 32
x_extent = 8.0
v_count = 2
m_nodes = 24

[model]
kappa = 1.0
eps = 0.2

[initial]
width = 1.0

[run]
t_end = 0.2
output_every = 0.1
out_dir = {out}
"""


def write_config(tmp_path: Path, name="scenario.cfg", extra="", t_end=None) -> Path:
    text = SMALL_CONFIG.format(out=tmp_path / "out")
    if t_end is not None:
        text = text.replace("t_end = 0.2", f"t_end = {t_end}")
    path = tmp_path / name
    path.write_text(text + extra)
    return path


def test_parse_config_roundtrip(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    assert cfg.grid.x_nodes == 32
    assert cfg.model.eps == 0.2
    assert cfg.run.t_end == 0.2


def test_unknown_key_rejected_naming_it(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[model]\nfoo = 1\n")
    assert main(["run", str(path)]) == 2
    assert "foo" in capsys.readouterr().err


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[mystery]\nx = 1\n")
    with pytest.raises(BadConfig, match="mystery"):
        parse_config(path)


def test_m_max_conflict_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[grid]\nm_max = 2.0\nm_max_auto = true\n")
    with pytest.raises(BadConfig, match="m_max"):
        parse_config(path)


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 3


def test_run_writes_dumps_and_diagnostics(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    out = tmp_path / "out"
    assert (out / "final.chk").exists()
    assert (out / "diagnostics.csv").exists()
    assert (out / "dump_0.chk").exists()
    assert (out / "dump_0.2.chk").exists()


def test_run_determinism_bitwise(tmp_path):
    cfg_path = write_config(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    first = (tmp_path / "out" / "final.chk").read_bytes()
    assert main(["run", str(cfg_path)]) == 0
    second = (tmp_path / "out" / "final.chk").read_bytes()
    assert first == second


def test_restart_equals_straight_through(tmp_path):
    cfg_full = write_config(tmp_path, name="full.cfg", t_end=0.2)
    assert main(["run", str(cfg_full)]) == 0
    straight = (tmp_path / "out" / "final.chk").read_bytes()

    cfg_half = write_config(tmp_path, name="half.cfg", t_end=0.1)
    assert main(["run", str(cfg_half)]) == 0
    mid = tmp_path / "out" / "dump_0.1.chk"
    assert mid.exists()
    assert main(["run", str(cfg_full), "--restart", str(mid)]) == 0
    resumed = (tmp_path / "out" / "final.chk").read_bytes()
    assert straight == resumed


def test_restart_rejects_mismatched_scenario(tmp_path):
    cfg_path = write_config(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    other = tmp_path / "other.cfg"
    other.write_text(SMALL_CONFIG.format(out=tmp_path / "out2").replace(
        "kappa = 1.0", "kappa = 1.5"))
    code = main(["run", str(other), "--restart",
                 str(tmp_path / "out" / "dump_0.1.chk")])
    assert code == 2


def test_compare_self_distance_zero(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    dump = str(tmp_path / "out" / "final.chk")
    assert main(["compare", dump, dump]) == 0
    out = capsys.readouterr().out
    assert "L1 distance:   0.0" in out
    assert "bitwise equal: True" in out


def test_compare_distinct_dumps(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    a = str(tmp_path / "out" / "dump_0.chk")
    b = str(tmp_path / "out" / "final.chk")
    assert main(["compare", a, b]) == 0
    assert "bitwise equal: False" in capsys.readouterr().out


def test_compare_rejects_non_dump(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["compare", str(cfg_path), str(cfg_path)]) == 2


def test_out_dir_env_override(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path)
    override = tmp_path / "elsewhere"
    monkeypatch.setenv("CHEMOKIN_OUT", str(override))
    assert main(["run", str(cfg_path)]) == 0
    assert (override / "final.chk").exists()
    assert not (tmp_path / "out" / "final.chk").exists()


def test_study_eps_cli(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["study-eps", str(cfg_path), "--eps", "0.4,0.2"]) == 0
    study = tmp_path / "out" / "study_eps.csv"
    assert study.exists()
    lines = study.read_text().splitlines()
    assert lines[0] == "eps,t,w1,l1_gap,mass,env_pbar_margin,env_n_margin,tail_moment,xmoment_rate"
    assert len(lines) == 1 + 2 * 3  # two eps, rows at t = 0, 0.1, 0.2


def test_study_eps_bad_list(tmp_path):
    cfg_path = write_config(tmp_path)
    assert main(["study-eps", str(cfg_path), "--eps", "0.1,0.2"]) == 2


def test_verify_passes_on_small_scenario(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["verify", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS spectral residual" in out
    assert "PASS free-space delta" in out
    assert "PASS kernel mass" in out
    assert "PASS oracle cross-validation" in out
    assert "PASS envelopes" in out
    assert (tmp_path / "out" / "kernel_check.csv").exists()


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_shipped_default_matches_coded_defaults():
    from chemokin.config import RunConfig
    shipped = parse_config(CONFIG_DIR / "default.cfg")
    assert shipped.scenario_hash() == RunConfig().scenario_hash()


def test_verify_passes_on_shipped_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CHEMOKIN_OUT", str(tmp_path / "out"))
    assert main(["verify", str(CONFIG_DIR / "default.cfg")]) == 0
    assert "verify: OK" in capsys.readouterr().out
