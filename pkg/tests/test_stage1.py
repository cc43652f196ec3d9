import numpy as np
import pytest

from spatialplan.geometry import contains
from spatialplan.nlp import check_derivatives
from spatialplan.ph_curve import path_function_jets, rmf_deviation
from spatialplan.ph_spline import coefficient_map
from spatialplan.scenarios import (
    canonical_corridor,
    random_corridor,
    straight_corridor,
    two_box_corridor,
)
from spatialplan.stage1 import (
    Stage1Options,
    Stage1Problem,
    _Stage1Nlp,
    control_points,
    initial_guess,
    initialize,
    solve_stage1,
    waypoints_for,
)


@pytest.fixture(scope="module")
def canonical_solution():
    return solve_stage1(Stage1Problem(canonical_corridor()))


def test_control_points_match_assembly(rng):
    from conftest import random_spline

    s = random_spline(rng, m=3)
    M = coefficient_map(3)
    coeffs = np.einsum("kpcf,f->kpc", M, s.free_coeffs)
    P, _ = control_points(coeffs, s.p_initial)
    for k in range(3):
        assert P[k] == pytest.approx(s.sections[k].curve_ctrl, abs=1e-12)


def test_initial_guess_single_box_straight():
    prob = Stage1Problem(straight_corridor())
    builder = _Stage1Nlp(prob, Stage1Options())
    z = initial_guess(prob)
    ev = builder._evaluate(z)
    assert ev["P"][0, 9] == pytest.approx(prob.p_final, abs=1e-12)
    assert np.max(builder.ineq_constraints(z)) < 0  # strictly inside


def test_initialize_two_boxes():
    prob = Stage1Problem(two_box_corridor())
    z, violation, report = initialize(prob)
    assert violation < 0.1
    builder = _Stage1Nlp(prob, Stage1Options())
    ev = builder._evaluate(z)
    wps = waypoints_for(prob)
    for k in range(prob.m):
        # section chords end near their waypoints after the polish
        assert np.linalg.norm(ev["P"][k, 9] - wps[k + 1]) < 5e-2


def test_stage1_derivatives(rng):
    prob = Stage1Problem(two_box_corridor())
    builder = _Stage1Nlp(prob, Stage1Options())
    err = check_derivatives(builder.build(), initial_guess(prob), n_points=4, seed=3)
    assert err < 1e-5


def test_stage1_straight_box_optimum():
    sol = solve_stage1(Stage1Problem(straight_corridor()))
    assert sol.report.converged
    assert sol.f_ph_value < 1e-8
    assert sol.spline.m == 1


def test_stage1_canonical(canonical_solution):
    sol = canonical_solution
    prob = Stage1Problem(canonical_corridor())
    assert sol.report.converged
    assert sol.f_ph_value < 1e-3
    # all control points inside their polyhedra
    for k, sec in enumerate(sol.spline.sections):
        poly = prob.corridor.polys[k]
        for p in sec.curve_ctrl:
            ok, margin = contains(poly, p, tol=1e-6)
            assert ok, margin
    # endpoints
    assert np.linalg.norm(sol.spline.sections[0].curve_ctrl[0] - prob.p_initial) < 1e-6
    assert np.linalg.norm(sol.spline.sections[-1].curve_ctrl[9] - prob.p_final) < 1e-6


def test_stage1_objective_matches_recomputation(canonical_solution):
    sol = canonical_solution
    recomputed = sum(rmf_deviation(sec.Z, step=0.1) for sec in sol.spline.sections)
    assert sol.f_ph_value == pytest.approx(recomputed, abs=1e-9)


def test_stage1_sampled_curve_containment(canonical_solution):
    sol = canonical_solution
    corridor = canonical_corridor()
    for k, sec in enumerate(sol.spline.sections):
        pts = np.array([sol.spline.position_at(k + t) for t in np.linspace(0, 1, 1000)])
        margins = corridor.polys[k].margins(pts)
        assert np.max(margins) <= 1e-6


def test_stage1_joint_smoothness(canonical_solution):
    spline = canonical_solution.spline
    for k in range(spline.m - 1):
        left = path_function_jets(spline.sections[k].Z, 1.0)
        right = path_function_jets(spline.sections[k + 1].Z, 0.0)
        for key in left:
            scale = 1.0 + np.max(np.abs(left[key]))
            assert np.max(np.abs(np.asarray(left[key]) - right[key])) / scale < 1e-5


def test_stage1_random_corridors_feasible(rng):
    for trial in range(3):
        corridor = random_corridor(rng, m=2)
        sol = solve_stage1(Stage1Problem(corridor))
        assert sol.report.converged, trial
        for k, sec in enumerate(sol.spline.sections):
            assert np.max(corridor.polys[k].margins(sec.curve_ctrl)) <= 1e-6


def test_stage1_multistart_consistency(rng):
    # perturbed restarts agree on feasibility and objective magnitude
    prob = Stage1Problem(two_box_corridor())
    base = solve_stage1(prob)
    best = base.f_ph_value
    from spatialplan.nlp import solve_nlp

    builder = _Stage1Nlp(prob, Stage1Options())
    z0, _, _ = initialize(prob)
    results = []
    for seed in range(10):
        z_start = z0 + 0.02 * np.random.default_rng(seed).standard_normal(z0.size)
        z, report = solve_nlp(builder.build(), z_start, Stage1Options().nlp)
        if report.converged:
            results.append((z, report))
    assert len(results) >= 8
    for z, report in results:
        assert report.max_violation <= 1e-6
        P, _ = control_points(builder.coeffs(z), prob.p_initial)
        for k, poly in enumerate(prob.corridor.polys):
            assert np.max(poly.margins(P[k])) <= 1e-6
        from spatialplan.ph_spline import assemble

        s = assemble(z, prob.p_initial)
        f = sum(rmf_deviation(sec.Z, step=0.1) for sec in s.sections)
        assert f <= max(10.0 * max(best, 1e-10), 1e-6)
