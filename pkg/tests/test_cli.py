import json
import os

import numpy as np
import pytest

from satqkd.cli import main, resolve_strategy
from satqkd.config import (RunConfig, build_run_config, config_hash,
                           parse_config_text)
from satqkd.detection import read_sifted
from satqkd.passlink import ConfigError
from satqkd.scintseries import ScintSeries, read_trace, write_trace


def write_cfg(path, duration, out, seed=123, n_block=46080, extra=""):
    path.write_text(
        f"link.pass_duration_s = {duration}\n"
        "run.scale = 0.02\n"
        f"run.seed = {seed}\n"
        f"run.out_dir = {out}\n"
        f"reconcile.n_block = {n_block}\n" + extra)
    return str(path)


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    """12 s desk-scale pass taken through pass/qkd/reconcile(e)/report."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    cfg = write_cfg(root / "run.cfg", 12, out)
    for argv in (["simulate-pass", "--config", cfg],
                 ["simulate-qkd", "--config", cfg],
                 ["reconcile", "--config", cfg, "--strategy", "e"],
                 ["skl-report", "--config", cfg]):
        assert main(argv) == 0
    return cfg, str(out)


def test_parse_config_text():
    pairs = parse_config_text("a.b = 1\n# note\n\nc.d = x y  # trailing\n")
    assert pairs == {"a.b": "1", "c.d": "x y"}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a.b = 1\na.b = 2\n")
    with pytest.raises(ConfigError, match="empty"):
        parse_config_text("a.b =\n")


def test_build_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="foo.bar"):
        build_run_config({"foo.bar": "1"})
    with pytest.raises(ConfigError, match="detector.nope"):
        build_run_config({"detector.nope": "1"})
    with pytest.raises(ConfigError, match="run.colour"):
        build_run_config({"run.colour": "blue"})
    with pytest.raises(ConfigError, match="detector.p_z"):
        build_run_config({"detector.p_z": "not-a-number"})


def test_build_config_applies_values():
    rc = build_run_config({"detector.p_z": "0.9", "run.scale": "0.1",
                           "link.pass_duration_s": "50",
                           "reconcile.n_block": "1800"})
    assert rc.detector.p_z == 0.9
    assert rc.scale == 0.1
    assert rc.link.pass_duration_s == 50
    assert rc.reconcile.n_block == 1800


def test_scale_preserves_window_ratio():
    rc = RunConfig(scale=0.1)
    det = rc.effective_detector()
    assert det.n_window == 25000
    assert rc.effective_scint().sample_rate_hz == 4000
    assert rc.effective_link().pulse_rate_hz == pytest.approx(1e8)
    full = RunConfig()
    assert full.effective_detector().n_window == 25000


def test_scale_validation():
    with pytest.raises(ConfigError, match="run.scale"):
        RunConfig(scale=0.0)
    with pytest.raises(ConfigError, match="run.scale"):
        RunConfig(scale=1.5)
    with pytest.raises(ConfigError, match="integer"):
        RunConfig(scale=1 / 3000)
    # 100 ns hold-off stops being an integer slot count below 1e-2
    with pytest.raises(ConfigError, match="hold-off"):
        RunConfig(scale=0.005).effective_detector()


def test_stage_seed_derivation():
    rc = RunConfig(seed=1000)
    assert rc.stage_seeds == {"scint": 1000, "clicks": 1001,
                              "meta": 1002, "reconcile": 1003}
    pinned = RunConfig(seed=1000, seed_clicks=777)
    assert pinned.stage_seeds["clicks"] == 777
    assert pinned.stage_seeds["scint"] == 1000


def test_config_hash_tracks_content():
    assert config_hash(RunConfig()) == config_hash(RunConfig())
    assert config_hash(RunConfig()) != config_hash(RunConfig(seed=1))


def test_resolve_strategy_names():
    assert resolve_strategy("e") == "e"
    assert resolve_strategy("FullLLR") == "e"
    assert resolve_strategy("fullllr-meanqber") == "d"
    assert resolve_strategy("NOLLR") == "a"
    with pytest.raises(ConfigError, match="unknown strategy"):
        resolve_strategy("zz")


def test_simulate_pass_outputs(short_run):
    _, out = short_run
    budget = open(os.path.join(out, "budget.csv")).read().splitlines()
    assert budget[0] == ("t_s,elev_deg,range_m,eta_coll_db,eta_point_db,"
                        "eta_atm_db,eta_static_db,v_perp_mps")
    assert len(budget) == 1 + 12
    series = read_trace(os.path.join(out, "scint.bin"))
    assert len(series) == 12 * 800
    assert series.sample_rate_hz == 800
    dec = open(os.path.join(out, "scint_decimated.csv")).read().splitlines()
    assert dec[0] == "t_s,eta_scint"
    assert len(dec) == 1 + 12 * 40
    turb = open(os.path.join(out, "turbulence.csv")).read().splitlines()
    assert turb[0] == "t_s,sigma_ry2,l_eff_m,d_aa,f_aa,psi,f_greenwood_hz"
    assert len(turb) == 1 + 12


def test_simulate_qkd_outputs(short_run):
    _, out = short_run
    sift = read_sifted(os.path.join(out, "sifted.bin"))
    assert len(sift) > 0
    assert sift.q.dtype == np.float64
    assert np.array_equal(sift.bob_bits, sift.alice_bits ^ sift.errors)
    lines = open(os.path.join(out, "qkd_summary.csv")).read().splitlines()
    assert lines[0] == "t_s,clicks,sifted_z,mean_qber"
    assert len(lines) == 1 + 12
    clicks_by_s = [int(line.split(",")[1]) for line in lines[1:]]
    sifted_by_s = [int(line.split(",")[2]) for line in lines[1:]]
    assert sum(sifted_by_s) == len(sift)
    assert sum(clicks_by_s) == sift.total_clicks >= len(sift)
    obs = json.load(open(os.path.join(out, "observations.json")))
    assert obs["sifted_len"] == len(sift)
    assert 0.0 < obs["mean_qber"] < 0.5
    assert 1e-4 <= obs["vacuum_fraction"] <= 1e-2
    # the key records are the Z-basis sift; X events only feed the tallies
    assert sum(obs["clicks_z"]) == len(sift)
    assert sum(obs["clicks_x"]) > 0
    assert all(c <= s for c, s in zip(obs["clicks_z"], obs["sent_z"]))


def test_reconcile_outputs(short_run):
    _, out = short_run
    lines = open(os.path.join(out, "blocks_e.csv")).read().splitlines()
    assert lines[0] == ("block_idx,n,phi_sel,mode,strategy,"
                       "rate_initial,rate_final,m_bits,success,f")
    agg = json.load(open(os.path.join(out, "reconcile_e.json")))
    assert len(lines) - 1 == agg["n_blocks"]
    assert agg["strategy"] == "FullLLR"
    assert 0.5 < agg["mean_rate"] < 1.0
    assert agg["leakage_bits"] > 0
    assert 1.0 <= agg["f_min"] <= agg["f_max"] <= 1.30


def test_skl_report_outputs(short_run):
    _, out = short_run
    rep = json.load(open(os.path.join(out, "skl_report.json")))
    assert rep["scale1_factor"] == 50
    rows = rep["strategies"]
    assert [r["label"] for r in rows] == ["e"]
    assert rows[0]["skl_scale1"] > 0
    assert rows[0]["skl_native"] >= 0
    assert "Hoeffding" in rep["bound_recipe"]


def test_manifest_and_rerun_identical(short_run):
    cfg, out = short_run
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert set(manifest["stages"]) == {"simulate-pass", "simulate-qkd",
                                       "reconcile-e", "skl-report"}
    assert manifest["seed"] == 123
    assert manifest["versions"]["satqkd"]

    def snapshot():
        return {name: open(os.path.join(out, name), "rb").read()
                for name in sorted(os.listdir(out))}

    before = snapshot()
    assert main(["simulate-pass", "--config", cfg]) == 0
    assert main(["simulate-qkd", "--config", cfg]) == 0
    assert main(["reconcile", "--config", cfg, "--strategy", "e"]) == 0
    assert main(["skl-report", "--config", cfg]) == 0
    assert snapshot() == before


def test_float_formatting_nine_digits(short_run):
    _, out = short_run
    row = open(os.path.join(out, "budget.csv")).read().splitlines()[1]
    for cell in row.split(",")[1:]:
        mantissa = cell.replace("-", "").replace(".", "").split("e")[0].lstrip("0")
        assert len(mantissa) <= 9


def test_missing_inputs_exit_3(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", 12, tmp_path / "nothing")
    assert main(["simulate-qkd", "--config", cfg]) == 3
    assert main(["skl-report", "--config", cfg]) == 3
    assert main(["reconcile", "--config", cfg, "--strategy", "e"]) == 3


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("detector.p_z = 1.7\n")
    assert main(["simulate-pass", "--config", str(bad)]) == 2
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("nope.key = 3\n")
    assert main(["simulate-pass", "--config", str(unknown)]) == 2
    assert main(["simulate-pass", "--config", str(tmp_path / "absent.cfg")]) == 2
    cfg = write_cfg(tmp_path / "ok.cfg", 12, tmp_path / "out")
    assert main(["reconcile", "--config", cfg, "--strategy", "bogus"]) == 2
    assert main(["reconcile", "--config", cfg]) == 2   # --strategy required


def test_zero_length_traces_exit_0(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "budget.csv").write_text(
        "t_s,elev_deg,range_m,eta_coll_db,eta_point_db,eta_atm_db,"
        "eta_static_db,v_perp_mps\n")
    write_trace(out / "scint.bin", ScintSeries(np.zeros(0), 800))
    cfg = write_cfg(tmp_path / "c.cfg", 12, out)
    assert main(["simulate-qkd", "--config", cfg]) == 0
    assert len(read_sifted(out / "sifted.bin")) == 0
    assert open(out / "qkd_summary.csv").read() == "t_s,clicks,sifted_z,mean_qber\n"
    obs = json.load(open(out / "observations.json"))
    assert obs["total_clicks"] == 0 and obs["sifted_len"] == 0


def test_cli_flag_overrides(tmp_path):
    out_a = tmp_path / "a"
    cfg = write_cfg(tmp_path / "c.cfg", 12, out_a, seed=5)
    out_b = tmp_path / "b"
    assert main(["simulate-pass", "--config", cfg, "--out", str(out_b),
                 "--seed", "99"]) == 0
    manifest = json.load(open(out_b / "manifest.json"))
    assert manifest["seed"] == 99
    assert manifest["stage_seeds"]["scint"] == 99
    assert not out_a.exists()


def test_sweep_strategies_tiny(tmp_path):
    out = tmp_path / "sweep"
    cfg = write_cfg(tmp_path / "c.cfg", 6, out, n_block=46080)
    assert main(["sweep-strategies", "--config", cfg]) == 0
    rep = json.load(open(out / "skl_report.json"))
    labels = [r["label"] for r in rep["strategies"]]
    assert labels == list("abcdefgh")
    for label in labels:
        assert (out / f"reconcile_{label}.json").exists()
        assert (out / f"blocks_{label}.csv").exists()
    # paired comparison: every strategy consumed the same sifted data
    manifest = json.load(open(out / "manifest.json"))
    assert "simulate-qkd" in manifest["stages"]
