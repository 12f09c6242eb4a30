"""Perturbed flow trees: seeding, Newton refinement, validation.

Uses the torus demo run (three Morse fields f, g, f+g) as the source of
real tree-counting problems; its saddle-to-saddle products are the
smallest honest instances with nonzero counts.
"""

import numpy as np
import pytest

from gftrees import trees as tr


def axis_of(p):
    """Which coordinate circle a torus saddle sits on (0 or 1)."""
    return int(np.argmin(np.abs(np.asarray(p.coords) - 0.5)))


def test_perturbation_sampling_is_deterministic_and_bounded():
    a = tr.PerturbationTriple.sample(5, 0.01, 42)
    b = tr.PerturbationTriple.sample(5, 0.01, 42)
    c = tr.PerturbationTriple.sample(5, 0.01, 43)
    for u, v in zip(a.parts(), b.parts()):
        assert np.array_equal(u, v)
    assert any(not np.array_equal(u, v) for u, v in zip(a.parts(), c.parts()))
    assert all(np.linalg.norm(s) < 0.01 for s in a.parts())
    assert a.check()


def test_perturbation_bound_is_enforced():
    s = tr.PerturbationTriple.sample(3, 0.01, 0)
    oversized = tr.PerturbationTriple(10 * s.s1, s.s2, s.s3, 0, 0.01)
    with pytest.raises(ValueError, match="norm"):
        oversized.check()


def test_grading_mismatch_is_rejected(morse_run):
    r = morse_run
    f_saddle = r.crits[0][1]      # grading 1
    g_saddle = r.crits[1][1]      # grading 1
    pit = r.crits[2][0]           # grading 0 != 2
    with pytest.raises(tr.DimensionError, match=r"\|p0\| = \|p1\| \+ \|p2\|"):
        tr.count_trees(f_saddle, g_saddle, pit, r.s, tuple(r.fields), r.rho)


def test_zero_dimensional_charts_are_out_of_scope(morse_run):
    r = morse_run
    # pits have index 0, so the sink's stable chart would be 0-dimensional
    with pytest.raises(tr.DimensionError, match="0-dimensional chart"):
        tr.TreeProblem(tuple(r.fields), r.crits[0][0], r.crits[1][0],
                       r.crits[2][0], r.s, r.rho)


def test_nonzero_expected_dimension_is_rejected(morse_run):
    r = morse_run
    problem = tr.TreeProblem(tuple(r.fields), r.crits[0][1], r.crits[1][1],
                             r.crits[2][1], r.s, r.rho)  # d = 1 - 2 = -1
    assert problem.d == -1
    with pytest.raises(tr.DimensionError, match="expected dimension"):
        tr.solve_trees(problem)


def test_saddle_products_follow_the_axis_rule(morse_run):
    """m2(a, b) hits the top class exactly when the two saddles wrap
    different coordinate circles."""
    r = morse_run
    f_saddles = [p for p in r.crits[0] if p.grading == 1]
    g_saddles = [p for p in r.crits[1] if p.grading == 1]
    top = [p for p in r.crits[2] if p.grading == 2][0]
    for p1 in f_saddles:
        for p2 in g_saddles:
            got = r.m2_counts[(p1.id, p2.id, top.id)]["parity"]
            want = 1 if axis_of(p1) != axis_of(p2) else 0
            assert got == want, (p1.id, p2.id)


def test_rotated_launch_directions_still_converge(morse_run):
    """(c1, c1) -> c3 needs a large launch-direction rotation during
    Newton; it must land on exactly one transverse tree."""
    r = morse_run
    assert r.m2_counts[("c1", "c1", "c3")]["parity"] == 1
    assert r.m2_counts[("c1", "c1", "c3")]["trees"] == 1


def test_found_trees_satisfy_the_matching_conditions(morse_run):
    r = morse_run
    p1 = r.crits[0][1]            # f-saddle on axis 0
    p2 = r.crits[1][1]            # g-saddle on axis 1
    top = r.crits[2][3]
    problem = tr.TreeProblem(tuple(r.fields), p1, p2, top, r.s, r.rho,
                             r0=r.solver["r0"], tolerances=r.tol)
    kw = {k: r.solver[k] for k in ("max_seeds", "seed_scale", "max_iter",
                                   "time_points", "tol_match", "fd_step",
                                   "dedup_radius", "cond_cap")}
    trees = tr.solve_trees(problem, **kw)
    assert len(trees) == 1
    (t,) = trees
    resid = np.linalg.norm(tr.tree_residual(t.theta, problem))
    assert resid < 2e-8
    assert t.residual_norm < 2e-8
    assert t.condition < r.solver["cond_cap"]
    # three recorded branches end where the matching says they should
    s1, s2, s3 = r.s.parts()
    e1 = np.asarray(t.gamma1.final) + s1
    e2 = np.asarray(t.gamma2.final) + s2
    e3 = np.asarray(t.gamma3.final) + s3
    for a, b in ((e1, e2), (e2, e3)):
        d = a - b
        d -= np.round(d)          # torus distance
        assert np.linalg.norm(d) < 1e-7
    assert t.meeting.shape == (2,)


def test_skipped_unit_products_are_recorded_not_counted(morse_run):
    r = morse_run
    assert r.skipped, "unit-action products should be set aside"
    for i1, i2, i0 in r.skipped:
        assert (i1, i2, i0) not in r.m2_counts
    # every skipped triple involves an index-0 source or a 0-dim chart
    by_id0 = {p.id: p for p in r.crits[0]}
    by_id1 = {p.id: p for p in r.crits[1]}
    by_id2 = {p.id: p for p in r.crits[2]}
    for i1, i2, i0 in r.skipped:
        p1, p2, p0 = by_id0[i1], by_id1[i2], by_id2[i0]
        k = (2 - p1.morse_index, 2 - p2.morse_index, p0.morse_index)
        assert min(k) == 0 or min(p1.morse_index, p2.morse_index) == 0
