"""Deformation invariance: interpolation paths and continuation maps."""

import pytest

from gftrees import continuation as ct
from gftrees import pipeline as pl


def prepared(config):
    return pl.GFRun(config).prepare()


def test_constant_path_gives_the_identity_exactly(unknot_config):
    run, report = ct.constant_path_check(unknot_config)
    assert report["pass"]
    assert report["identity"]
    assert report["phi"] == {"c1->c1": 1}
    assert report["cochain_defects"] == []
    assert report["diagnostics"]["t_monotone_ok"]


def test_slice_fields_interpolate_between_the_endpoints(unknot_config,
                                                        unknot_moved_config):
    a = prepared(unknot_config)
    b = prepared(unknot_moved_config)
    z = [0.3, 0.8, -0.6]
    lo = ct.slice_field(a.w, b.w, 0.0).value(z)
    hi = ct.slice_field(a.w, b.w, 1.0).value(z)
    assert lo == pytest.approx(a.w.value(z), abs=1e-12)
    assert hi == pytest.approx(b.w.value(z), abs=1e-12)
    mid = ct.slice_field(a.w, b.w, 0.5).value(z)
    assert min(lo, hi) - 1e-12 <= mid <= max(lo, hi) + 1e-12
    # outside [0, 1] the ramp has fully saturated
    assert ct.slice_field(a.w, b.w, -0.2).value(z) == pytest.approx(lo, abs=1e-12)
    assert ct.slice_field(a.w, b.w, 1.2).value(z) == pytest.approx(hi, abs=1e-12)


def test_paths_require_identical_shapes(unknot_config, multi_config):
    a = prepared(unknot_config)

    stab = dict(unknot_config)
    stab["family"] = {**unknot_config["family"], "stabilize": ["+"]}
    with pytest.raises(ct.PathError, match="dimension"):
        ct.FamilyPath(a, prepared(stab))

    plus = prepared(stab)
    minus_cfg = dict(unknot_config)
    minus_cfg["family"] = {**unknot_config["family"], "stabilize": ["-"]}
    with pytest.raises(ct.PathError, match="shape"):
        ct.FamilyPath(plus, prepared(minus_cfg))

    steep = dict(unknot_config)
    steep["family"] = {**unknot_config["family"], "slope": [2]}
    with pytest.raises(ct.PathError):
        ct.FamilyPath(a, prepared(steep))

    boxed = dict(unknot_config)
    boxed["family"] = {**unknot_config["family"],
                       "inner_box": [[-1.6, 1.6], [-2, 2]]}
    with pytest.raises(ct.PathError):
        ct.FamilyPath(a, prepared(boxed))


def test_oversized_interpolation_bumps_are_rejected(unknot_config,
                                                    unknot_moved_config):
    a = prepared(unknot_config)
    b = prepared(unknot_moved_config)
    with pytest.raises(ct.PathError, match="subdivide"):
        ct.FamilyPath(a, b, eps=10.0)


def test_blend_rejects_mismatched_quadratic_blocks(unknot_config):
    plus = dict(unknot_config)
    plus["family"] = {**unknot_config["family"], "stabilize": ["+"]}
    minus = dict(unknot_config)
    minus["family"] = {**unknot_config["family"], "stabilize": ["-"]}
    a, b = prepared(plus), prepared(minus)
    with pytest.raises(ct.PathError, match="quadratic blocks"):
        ct.blend_field(a.w, b.w, 0.1)


def test_translated_family_keeps_its_ring(unknot_config, unknot_moved_config):
    run0, run1, verdict = ct.isotopy_compare(unknot_config,
                                             unknot_moved_config)
    assert verdict["pass"], verdict
    assert not verdict["constant_path"]
    assert verdict["eps"] > 0
    for key in ("w", "12", "23", "13"):
        assert verdict["phi"][key] == {"c1->c1": 1}
        assert verdict["cochain_defects"][key] == []
    assert verdict["t_monotone_ok"]
    assert all(all(block.values()) for block in [verdict["invertible"]])
    assert run0.ring.ranks == run1.ring.ranks == {2: 1}


def test_two_generator_family_maps_by_the_identity_matrix(
        twowell_config, twowell_moved_config):
    run0, run1, verdict = ct.isotopy_compare(twowell_config,
                                             twowell_moved_config)
    assert verdict["pass"], verdict
    assert run0.ring.ranks == {2: 2}
    assert run1.ring.ranks == {2: 2}
    for key in ("w", "12", "23", "13"):
        hits = {k: v for k, v in verdict["phi"][key].items() if v}
        assert hits == {"c2->c2": 1, "c3->c3": 1}
    # the descending corner of the matrix cannot be counted directly and
    # is recorded as such
    assert verdict["value_obstructions"] == ["c3->c2"]
    assert verdict["product_defects"] == []


def test_reversing_a_path_inverts_the_class_map(unknot_config,
                                                unknot_moved_config):
    run0, run1 = ct._aligned_runs(unknot_config, unknot_moved_config)
    path = ct.FamilyPath(run0, run1)
    report = ct.reversal_check(path)
    assert report["pass"]
    assert report["defects"] == []


def test_diagram_check_requires_equal_graded_ranks(unknot_config,
                                                   twowell_config):
    a = pl.gf_run(unknot_config)
    b = pl.gf_run(twowell_config)
    with pytest.raises(ct.PathError, match="rank"):
        ct.diagram_check(a, b, {}, {}, {})
