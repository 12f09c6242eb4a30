"""End-to-end runs: frozen small-family answers, determinism, comparisons."""

import json

import numpy as np
import pytest

from gftrees import pipeline as pl


def test_unknot_run_frozen_facts(unknot_run):
    run = unknot_run
    assert [p.id for p in run.chords] == ["c1"]
    (p,) = run.chords
    assert p.value == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert (p.morse_index, p.grading) == (3, 2)
    assert run.rho == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert run.complex.delta == {}
    assert run.complex.m2 == {}
    assert run.ring.ranks == {2: 1}
    assert run.algebra["pass"]


def test_multichord_run_frozen_facts(multi_run):
    run = multi_run
    got = {p.id: (p.grading, round(p.value, 9)) for p in run.chords}
    assert got == {"c3": (1, 0.467868979), "c4": (2, 1.140855001),
                   "c5": (2, 1.540813236)}
    assert {k: sorted(v) for k, v in run.complex.delta.items()} == \
        {"c3": ["c4", "c5"]}
    assert run.complex.m2 == {}
    assert run.ring.ranks == {1: 0, 2: 1}
    assert all(res["parity"] == 0 for res in run.m2_counts.values())
    assert run.algebra["pass"]
    # the surviving class is spanned by either well chord
    (cls,) = run.ring.classes[2]
    assert cls.support in (["c4"], ["c5"])


def test_resolved_config_fills_every_default(unknot_config):
    cfg = pl.resolve_config(unknot_config)
    assert cfg["seeds"] == {"rng": 0, "grid_density": 7}
    assert cfg["solver"]["r0"] == 1e-3
    assert cfg["solver"]["lambda"] is None
    assert cfg["tolerances"]["rtol"] == 1e-8
    assert cfg["tolerances"]["tol_grad"] == 1e-9


def test_unknown_tolerance_names_are_rejected(unknot_config):
    unknot_config["tolerances"] = {"rtoll": 1e-9}
    with pytest.raises(ValueError, match="unknown tolerance"):
        pl.resolve_config(unknot_config)


def test_gf_run_requires_gf_mode(unknot_config):
    unknot_config["mode"] = "morse-torus"
    with pytest.raises(ValueError, match="mode"):
        pl.GFRun(unknot_config)


def test_lambda_override_is_honoured(unknot_config):
    unknot_config["solver"] = {"lambda": 0.011}
    run = pl.GFRun(unknot_config).prepare()
    assert run.lam == 0.011
    auto = pl.GFRun({k: v for k, v in unknot_config.items()
                     if k != "solver"}).prepare()
    assert auto.lam == pytest.approx(
        pl.choose_lambda(auto.family, auto.rho), rel=1e-12)


def test_canonical_json_is_stable_and_sorted():
    text = pl.canonical_json({"b": 1 / 3, "a": [np.float64(0.1)],
                              "nested": {"z": 1, "y": (2, 3)}})
    assert text == pl.canonical_json(json.loads(text))
    keys = [line.split('"')[1] for line in text.splitlines() if '":' in line]
    assert keys == sorted(keys)
    assert "0.333333333333" in text


def test_reports_are_identical_across_runs(unknot_run, unknot_config):
    fresh = pl.gf_run(unknot_config)
    assert pl.canonical_json(fresh.report()) == \
        pl.canonical_json(unknot_run.report())


def test_report_carries_no_wall_clock_fields(unknot_run):
    text = pl.canonical_json(unknot_run.report()).lower()
    for stamp in ("timestamp", "date", "hostname", "duration", "elapsed"):
        assert stamp not in text


def test_worker_pool_and_inline_execution_agree(multi_run, multi_config):
    pooled = pl.gf_run(multi_config, jobs=2)
    assert pl.canonical_json(pooled.report()) == \
        pl.canonical_json(multi_run.report())


def test_family_checks_pass_on_the_unknot(unknot_run):
    rep = pl.family_checks(unknot_run)
    assert rep["pass"]
    assert rep["exterior_linearity_residual"] < 1e-9
    assert rep["jump_identity_residual"] < 1e-9
    assert rep["blend_annulus_gradient_floor"] > 1e-6


def test_transfer_check_embeds_every_chord(unknot_run):
    rep = pl.transfer_check(unknot_run)
    assert rep["pass"]
    assert len(rep["embeddings"]) == 3  # one chord, three embeddings
    for entry in rep["embeddings"]:
        assert entry["value_deviation"] < 1e-9
        assert entry["index_shift_defect"] == 0
        assert entry["grading_preserved"]


def test_verify_run_aggregates_all_checks(unknot_config):
    run, rep = pl.verify_run(unknot_config)
    assert rep["pass"]
    assert rep["family_checks"]["pass"]
    assert rep["transfer"]["pass"]
    assert rep["algebra"]["pass"]
    assert rep["ranks"] == {"2": 1}


def test_compare_runs_on_identical_configs(unknot_run, unknot_config):
    fresh = pl.gf_run(unknot_config)
    verdict = pl.compare_runs(unknot_run, fresh)
    assert verdict["pass"]
    assert verdict["generator_map"] == {"c1": "c1"}


def test_morse_rho_is_the_least_value_gap():
    a = pl.morse_rho([[type("P", (), {"value": v})() for v in (0.0, 1.3)],
                      [type("P", (), {"value": v})() for v in (0.7, 2.0)]])
    assert a == pytest.approx(0.6)
    with pytest.raises(ValueError, match="coincide"):
        pl.morse_rho([[type("P", (), {"value": 1.0})(),
                       type("P", (), {"value": 1.0})()]])


def test_morse_demo_passes_its_own_checks(morse_run):
    checks = pl.morse_demo_check(morse_run)
    assert checks == {"ranks": True, "delta_zero": True,
                      "degree1_product_table": True, "pass": True}


def test_morse_report_is_deterministic(morse_run):
    again = pl.MorseRun().execute()
    assert pl.canonical_json(again.report()) == \
        pl.canonical_json(morse_run.report())
