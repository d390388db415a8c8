"""End-to-end runs of the command-line pipeline."""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np
import pytest

from geotrade.cli import OPTIONS, main
from geotrade.events import read_scores
from geotrade.gravity import BLOC_COLUMNS, GRAVITY_COLUMNS
from geotrade.lp import IRF_COLUMNS
from geotrade.shocks import DECOMPOSED_COLUMNS, read_decomposed
from geotrade.synthworld import WorldConfig


def manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small world pushed through synth, score, panel, and lp."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    cwd = os.getcwd()
    os.chdir(root)
    try:
        assert main(["synth", "--flavor", "lp", "--n-countries", "6",
                     "--n-years", "22", "--seed", "11", "--tariff-rate", "0.05",
                     "--out", "world"]) == 0
        assert main(["score", "--events", "world/events.csv",
                     "--out", "scores.csv"]) == 0
        assert main(["panel", "--trade", "world/trade.csv", "--scores", "scores.csv",
                     "--tariffs", "world/tariffs.csv", "--controls", "world/controls.csv",
                     "--out", "panel.csv"]) == 0
        assert main(["lp", "--panel", "panel.csv", "--horizons", "-3", "6",
                     "--decompose", "--out", "lpout"]) == 0
    finally:
        os.chdir(cwd)
    return root


# ---------------------------------------------------------------------------
# individual commands

def test_synth_exposes_every_world_config_field():
    exposed = {opt.dest for opt in OPTIONS["synth"]}
    for field in dataclasses.fields(WorldConfig):
        assert field.name in exposed


def test_synth_manifest_echoes_resolved_config(pipeline):
    m = manifest(pipeline / "world" / "manifest.json")
    assert m["command"] == "synth"
    assert m["parameters"]["seed"] == 11
    assert m["parameters"]["n_countries"] == 6
    # unset fields resolve to the generator defaults, not null
    assert m["parameters"]["ar_coef"] == WorldConfig().ar_coef
    assert m["tool"]["name"] == "geotrade"


def test_score_outputs_and_manifest(pipeline):
    scores = read_scores(pipeline / "scores.csv")
    assert len(scores) == 15
    m = manifest(pipeline / "scores.manifest.json")
    assert m["parameters"]["delta"] == 0.3
    assert m["results"]["n_dyads"] == 15
    assert m["inputs"]["events"] == "world/events.csv"
    assert sorted(m["outputs"]) == ["scores.csv", "scores.manifest.json"]


def test_score_delta_one_is_unsmoothed(pipeline, tmp_path):
    out = tmp_path / "unsmoothed.csv"
    assert main(["score", "--events", str(pipeline / "world" / "events.csv"),
                 "--delta", "1.0", "--out", str(out)]) == 0
    for series in read_scores(out).values():
        # full replacement each event year: the dynamic score is the raw one
        assert series.dynamic == series.raw


def test_panel_reports_drops(pipeline):
    m = manifest(pipeline / "panel.manifest.json")
    assert m["results"]["n_domestic_dropped"] == 6 * 22
    assert m["results"]["n_obs"] == 6 * 5 * 22
    assert m["results"]["years"] == [1980, 2001]


def test_gravity_command(pipeline):
    out = pipeline / "gravity.csv"
    assert main(["gravity", "--panel", str(pipeline / "panel.csv"),
                 "--controls", "log_distance,contiguity", "--yearly",
                 "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == ",".join(GRAVITY_COLUMNS)
    yearly = pipeline / "gravity_yearly.csv"
    assert yearly.exists()
    m = manifest(pipeline / "gravity.manifest.json")
    assert "gravity_yearly.csv" in m["outputs"]
    assert m["results"]["n_obs"] == 6 * 5 * 22


def test_lp_decompose_outputs(pipeline):
    lines = (pipeline / "lpout" / "irf.csv").read_text().splitlines()
    assert lines[0] == ",".join(IRF_COLUMNS)
    assert len(lines) == 1 + 10                      # horizons -3..6
    assert (pipeline / "lpout" / "autocorr.csv").exists()
    dec = read_decomposed(pipeline / "lpout" / "shock_decomposition.csv")
    assert np.array_equal(np.diff(dec.permanent, prepend=0.0), dec.transitory)
    m = manifest(pipeline / "lpout" / "manifest.json")
    assert m["parameters"]["horizons"] == [-3, 6]
    assert m["results"]["kind"] == "outcome_on_shock"


def test_standalone_decompose_matches_lp_flag(pipeline, tmp_path):
    out = tmp_path / "dec.csv"
    assert main(["decompose", "--outcome-irf", str(pipeline / "lpout" / "irf.csv"),
                 "--acf-irf", str(pipeline / "lpout" / "autocorr.csv"),
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (pipeline / "lpout" / "shock_decomposition.csv").read_bytes()


def test_bloc_command(pipeline, tmp_path):
    out = tmp_path / "blocs.csv"
    assert main(["bloc", "--panel", str(pipeline / "panel.csv"),
                 "--window", "1990", "2000", "--anchors", "AAA", "AAB",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(BLOC_COLUMNS)
    assert len(lines) == 1 + 6


def test_counterfactual_outputs(pipeline):
    cf = pipeline / "cf"
    assert main(["counterfactual", "--trade", str(pipeline / "world" / "trade.csv"),
                 "--scores", str(pipeline / "scores.csv"),
                 "--response", str(pipeline / "lpout" / "shock_decomposition.csv"),
                 "--tariffs", str(pipeline / "world" / "tariffs.csv"),
                 "--base-year", "1996", "--out", str(cf)]) == 0
    scen = (cf / "scenarios.csv").read_text().splitlines()
    assert len(scen) == 1 + 4 * 5                    # four scenarios, 1997..2001
    items = [line.split(",")[0] for line in (cf / "contributions.csv").read_text().splitlines()[1:]]
    assert items == ["growth_Baseline", "growth_NoGeo", "growth_NoTariff",
                     "growth_OnlyUnobserved", "contribution_geo",
                     "contribution_tariff", "contribution_combined"]
    m = manifest(cf / "manifest.json")
    assert set(m["results"]["trade_index"]) == {"Baseline", "NoGeo", "NoTariff",
                                                "OnlyUnobserved"}


def test_counterfactual_subset_skips_contributions(pipeline, tmp_path):
    cf = tmp_path / "cf_sub"
    assert main(["counterfactual", "--trade", str(pipeline / "world" / "trade.csv"),
                 "--scores", str(pipeline / "scores.csv"),
                 "--response", str(pipeline / "lpout" / "shock_decomposition.csv"),
                 "--base-year", "1996", "--scenarios", "Baseline,NoGeo",
                 "--years", "1997", "1999", "--out", str(cf)]) == 0
    assert not (cf / "contributions.csv").exists()
    assert len((cf / "scenarios.csv").read_text().splitlines()) == 1 + 2 * 3


# ---------------------------------------------------------------------------
# configuration layering

def test_config_file_and_flag_precedence(pipeline, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[score]\ndelta = 0.5\nthrough-year = 2003\n")
    events = str(pipeline / "world" / "events.csv")

    a = tmp_path / "a.csv"
    assert main(["score", "--config", str(ini), "--events", events,
                 "--out", str(a)]) == 0
    m = manifest(tmp_path / "a.manifest.json")
    assert m["parameters"]["delta"] == 0.5
    assert m["parameters"]["through_year"] == 2003

    b = tmp_path / "b.csv"
    assert main(["score", "--config", str(ini), "--delta", "0.7", "--events", events,
                 "--out", str(b)]) == 0
    assert manifest(tmp_path / "b.manifest.json")["parameters"]["delta"] == 0.7


def test_unknown_config_key_rejected(pipeline, tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[score]\ndeltaa = 0.5\n")
    code = main(["score", "--config", str(ini),
                 "--events", str(pipeline / "world" / "events.csv"),
                 "--out", str(tmp_path / "x.csv")])
    assert code == 2
    assert "deltaa" in capsys.readouterr().err


def test_threads_flag_caps_pools(pipeline, tmp_path, monkeypatch):
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    assert main(["score", "--events", str(pipeline / "world" / "events.csv"),
                 "--threads", "2", "--out", str(tmp_path / "t.csv")]) == 0
    assert os.environ["OMP_NUM_THREADS"] == "2"
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    monkeypatch.delenv("OPENBLAS_NUM_THREADS", raising=False)


# ---------------------------------------------------------------------------
# failure modes and exit codes

def test_no_command_prints_help(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert main(["score", "--out", "x.csv"]) == 2
    assert "--events" in capsys.readouterr().err


def test_bad_event_file_exits_2_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "origin,partner,year,cameo_root,cameo_quad,goldstein,economic,description\n"
        "AAA,BBB,xx,1,VerbalCooperation,1.0,Trade,d\n"
    )
    out = tmp_path / "s.csv"
    assert main(["score", "--events", str(bad), "--out", str(out)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()


def test_missing_input_file_exits_4(tmp_path):
    assert main(["score", "--events", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "s.csv")]) == 4


def test_nonconvergence_exits_3_without_outputs(pipeline, tmp_path, capsys):
    cf = tmp_path / "cf_fail"
    code = main(["counterfactual", "--trade", str(pipeline / "world" / "trade.csv"),
                 "--scores", str(pipeline / "scores.csv"),
                 "--response", str(pipeline / "lpout" / "shock_decomposition.csv"),
                 "--base-year", "1996", "--max-iter", "2", "--out", str(cf)])
    assert code == 3
    assert "did not converge" in capsys.readouterr().err
    assert not cf.exists()


def test_bootstrap_requires_decompose(pipeline, capsys):
    code = main(["lp", "--panel", str(pipeline / "panel.csv"),
                 "--horizons", "0", "2", "--bootstrap", "4", "--out", "x"])
    assert code == 2
    assert "--decompose" in capsys.readouterr().err


def test_malformed_iv_flag(pipeline, capsys):
    code = main(["lp", "--panel", str(pipeline / "panel.csv"),
                 "--horizons", "0", "2", "--iv", "score", "--out", "x"])
    assert code == 2
    assert "instruments=" in capsys.readouterr().err


def test_gravity_validates_before_writing(pipeline, tmp_path, capsys):
    out = tmp_path / "g.csv"
    code = main(["gravity", "--panel", str(pipeline / "panel.csv"),
                 "--score", "no_such_column", "--out", str(out)])
    assert code == 2
    assert not out.exists()


# ---------------------------------------------------------------------------
# reproducibility

def run_chain(root: Path) -> None:
    cwd = os.getcwd()
    os.chdir(root)
    try:
        for argv in (
            ["synth", "--flavor", "lp", "--n-countries", "5", "--n-years", "20",
             "--seed", "7", "--tariff-rate", "0.04", "--out", "world"],
            ["score", "--events", "world/events.csv", "--out", "scores.csv"],
            ["panel", "--trade", "world/trade.csv", "--scores", "scores.csv",
             "--tariffs", "world/tariffs.csv", "--out", "panel.csv"],
            ["lp", "--panel", "panel.csv", "--horizons", "-2", "4", "--lags", "2",
             "--decompose", "--bootstrap", "5", "--seed", "7", "--out", "lpout"],
            ["counterfactual", "--trade", "world/trade.csv", "--scores", "scores.csv",
             "--response", "lpout/shock_decomposition.csv",
             "--tariffs", "world/tariffs.csv", "--base-year", "1995", "--out", "cf"],
        ):
            assert main(argv) == 0, argv
    finally:
        os.chdir(cwd)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_repeated_chain_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    run_chain(a)
    run_chain(b)
    assert tree_bytes(a) == tree_bytes(b)
