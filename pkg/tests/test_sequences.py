import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiuniform.geometry import Ball, FiniteSet, Hypercube, Norm, dyadic_grid
from quasiuniform.metrics import Design, fill_distance_interval, separation_radius
from quasiuniform.sequences import (
    GreedyConfig,
    RelaxationSchedule,
    beta_recommended,
    boundary_phobic_packing,
    greedy_packing,
    greedy_packing_interval,
    phobic_score,
    radical_inverse,
    relaxed_greedy_packing,
    van_der_corput,
)
from quasiuniform.theory import predicted_metrics_2d

UNIT2 = Hypercube.unit(2)
T_STAR = math.sqrt(2) / (2 * (4 + math.sqrt(2)))  # best n=2 corner point for beta=4


def grid_cfg(k=3, n=40, **kw):
    return GreedyConfig.grid(UNIT2, k, n_max=n, **kw)


# ---- exact interval greedy -------------------------------------------------------

def test_interval_greedy_from_centre():
    design, trace = greedy_packing_interval(0, 1, 0.5, 5)
    assert design.points[:, 0].tolist() == [0.5, 0.0, 1.0, 0.25, 0.75]
    assert [r.cr_lower for r in trace] == [0.5, 0.25, 0.25, 0.125]


def test_interval_greedy_from_endpoint():
    design, _ = greedy_packing_interval(0, 1, 0.0, 3)
    assert design.points[:, 0].tolist() == [0.0, 1.0, 0.5]


def test_interval_greedy_is_dyadic_after_the_endpoints():
    design, trace = greedy_packing_interval(0, 1, 0.5, 257)
    assert set(design.points[:, 0]) == {i / 256 for i in range(257)}
    for row in trace:
        assert row.cr_lower == fill_distance_interval(design.prefix(row.n), 0, 1)
        assert row.sr == separation_radius(design.prefix(row.n))


def test_interval_greedy_rejects_bad_inputs():
    with pytest.raises(ValueError):
        greedy_packing_interval(1, 0, 0.5, 3)
    with pytest.raises(ValueError):
        greedy_packing_interval(0, 1, 2.0, 3)


def test_greedy_config_dispatches_to_interval():
    design, _ = greedy_packing(GreedyConfig(Hypercube.unit(1), n_max=4))
    assert design.points[:, 0].tolist() == [0.5, 0.0, 1.0, 0.25]


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(2, 60))
def test_interval_halving_identity(x1, n):
    _, trace = greedy_packing_interval(0, 1, x1, n)
    rows = trace.rows
    for prev, row in zip(rows, rows[1:]):
        assert row.sr == prev.cr_lower / 2


# ---- grid greedy -----------------------------------------------------------------

def test_greedy_d2_first_points():
    design, _ = greedy_packing(grid_cfg(n=5))
    assert design.points.tolist() == [[0.5, 0.5], [0, 0], [0, 1], [1, 0], [1, 1]]


@pytest.mark.parametrize("n", [41, 80])
def test_greedy_d2_matches_schedule(n):
    _, trace = greedy_packing(grid_cfg(k=5, n=n, eval_k=5))
    row = trace.rows[-1]
    p = predicted_metrics_2d(n)
    assert row.n == n
    assert row.sr == pytest.approx(p.sr, abs=1e-12)
    assert row.cr_lower == pytest.approx(p.cr, abs=1e-12)


@pytest.mark.parametrize("norm", list(Norm))
def test_greedy_halving_identity_is_exact(norm):
    # the new point sits at the previous fill distance over the candidates
    # cr_lower over the candidates is exact; the upper bound is not needed here
    _, trace = greedy_packing(grid_cfg(k=4, n=120, eval_k=4, norm=norm, cr_bound="sandwich"))
    rows = trace.rows
    for prev, row in zip(rows, rows[1:]):
        assert row.sr == prev.cr_lower / 2


def test_greedy_stops_when_candidates_run_out():
    design, _ = greedy_packing(grid_cfg(k=1, n=100))
    assert len(design) == 9


def test_greedy_rejects_start_outside_candidates():
    with pytest.raises(ValueError):
        greedy_packing(grid_cfg(x1=[0.3, 0.3]))


def test_greedy_on_ball_stays_inside():
    ball = Ball([0.5, 0.5], 0.5)
    design, trace = greedy_packing(GreedyConfig.grid(ball, 4, n_max=30))
    assert all(ball.contains(p) for p in design.points)
    assert len(trace) == 29


def test_tie_tolerance_picks_first_near_maximiser():
    cand = FiniteSet([[0.0], [0.5], [0.9999], [1.0]])
    cfg = GreedyConfig(cand, n_max=2, x1=[0.5], tie_tol=1e-3)
    design, _ = greedy_packing(cfg)
    assert design.points[1, 0] == 0.0


# ---- relaxed greedy ----------------------------------------------------------

def test_relaxed_with_unit_alpha_equals_greedy():
    ref, ref_trace = greedy_packing(grid_cfg())
    for selector in ("argmax", "ball"):
        got, trace = relaxed_greedy_packing(grid_cfg(), RelaxationSchedule(1.0), selector)
        assert np.array_equal(got.points, ref.points)
        assert trace.rows == ref_trace.rows


def test_relaxed_ball_is_seed_deterministic():
    sched = RelaxationSchedule(0.5)
    a, _ = relaxed_greedy_packing(grid_cfg(), sched, "ball", seed=3)
    b, _ = relaxed_greedy_packing(grid_cfg(), sched, "ball", seed=3)
    c, _ = relaxed_greedy_packing(grid_cfg(), sched, "ball", seed=4)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


@pytest.mark.parametrize("a", [0.5, 0.8])
def test_relaxed_mesh_ratio_bound_on_finite_domain(a):
    grid = dyadic_grid(UNIT2, 4)
    cfg = GreedyConfig(grid, n_max=150)
    for seed in range(3):
        _, trace = relaxed_greedy_packing(cfg, RelaxationSchedule(a), "ball", seed=seed)
        assert max(trace.column("mr_upper")) <= 2 / a + 1e-9


def test_relaxation_schedule_validation():
    with pytest.raises(ValueError):
        RelaxationSchedule(0.0)
    sched = RelaxationSchedule(0.5, alpha=lambda n: 0.4)
    with pytest.raises(ValueError):
        sched(3)
    assert RelaxationSchedule(0.5, alpha=lambda n: 1.0)(3) == 1.0


def test_relaxed_unknown_selector():
    with pytest.raises(ValueError):
        relaxed_greedy_packing(grid_cfg(), RelaxationSchedule(1.0), "random")


# ---- boundary-phobic ------------------------------------------------------------

def test_phobic_infinite_beta_equals_greedy():
    ref, _ = greedy_packing(grid_cfg())
    got, _ = boundary_phobic_packing(grid_cfg(), math.inf)
    assert np.array_equal(got.points, ref.points)


def test_phobic_keeps_points_off_the_boundary():
    design, _ = boundary_phobic_packing(grid_cfg(k=5, n=60), 4.0)
    assert not np.any((design.points == 0) | (design.points == 1))


def test_phobic_grid_only_overshoots_at_n2():
    # on a grid the n=2 point cannot reach the corner optimum (t*, t*)
    _, trace = boundary_phobic_packing(grid_cfg(k=7, n=2, eval_k=7), 4.0)
    bound = 1 + math.sqrt(2) / 4
    assert trace.rows[0].mr_lower > 2 * bound
    assert trace.rows[0].mr_lower == pytest.approx(2.7234, abs=1e-4)


def test_phobic_polish_reaches_corner_optimum():
    design, trace = boundary_phobic_packing(grid_cfg(k=5, n=2, eval_k=5), 4.0, polish=True)
    assert design.points[1] == pytest.approx([T_STAR, T_STAR], abs=1e-9)
    assert trace.rows[0].mr_upper <= 2 * (1 + math.sqrt(2) / 4) + 1e-9


def test_phobic_polish_never_lowers_the_score():
    design, _ = boundary_phobic_packing(grid_cfg(k=4, n=12), 2.0, polish=True)
    grid_design, _ = boundary_phobic_packing(grid_cfg(k=4, n=12), 2.0)
    for n in range(2, 12):
        polished = phobic_score(design.points[n], design.points[:n], UNIT2, 2.0)
        gridded = phobic_score(grid_design.points[n], design.points[:n], UNIT2, 2.0)
        assert polished >= gridded - 1e-12


def test_phobic_polish_validation():
    with pytest.raises(ValueError):
        boundary_phobic_packing(grid_cfg(norm="linf"), 4.0, polish=True)
    with pytest.raises(ValueError):
        boundary_phobic_packing(grid_cfg(), math.inf, polish=True)
    with pytest.raises(ValueError):
        boundary_phobic_packing(grid_cfg(), 0.0)


@pytest.mark.parametrize("n, d", [(100, 2), (1000, 3), (50, 5)])
def test_beta_recommended_direct_evaluation(n, d):
    vd = {2: math.pi, 3: 4 * math.pi / 3, 5: 8 * math.pi**2 / 15}[d]
    expected = (d / 2) * (n * vd) ** (1 / d) - math.sqrt(d)
    assert beta_recommended(n, d) == pytest.approx(expected, rel=1e-13)


def test_beta_recommended_values():
    assert beta_recommended(100, 2) == pytest.approx(16.3103, abs=1e-4)
    assert beta_recommended(1000, 3) == pytest.approx(22.4478, abs=1e-4)


def test_beta_recommended_warns_when_not_positive():
    with pytest.warns(RuntimeWarning):
        assert beta_recommended(1, 1) <= 0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        beta_recommended(100, 2)


# ---- van der Corput ---------------------------------------------------------------

def test_van_der_corput_first_values():
    assert van_der_corput(4).points[:, 0].tolist() == [0.5, 0.25, 0.75, 0.125]


@pytest.mark.parametrize("j", range(1, 12))
def test_van_der_corput_fills_dyadic_levels(j):
    pts = van_der_corput(2**j - 1).points[:, 0]
    assert sorted(pts * 2**j) == list(range(1, 2**j))


def test_radical_inverse_rejects_negative():
    with pytest.raises(ValueError):
        radical_inverse(-1)


def test_van_der_corput_is_a_design_of_distinct_points():
    d = van_der_corput(1000)
    assert isinstance(d, Design)
    assert len(np.unique(d.points)) == 1000


def test_phobic_polish_meets_the_mesh_ratio_bound_up_to_80():
    cfg = GreedyConfig.grid(UNIT2, 7, n_max=80)
    _, trace = boundary_phobic_packing(cfg, 4.0, polish=True)
    assert max(trace.column("mr_upper")) <= 2 * (1 + math.sqrt(2) / 4) + 1e-12
    assert 0.0867 <= trace.rows[-1].cr_lower <= trace.rows[-1].cr_upper <= 0.0959
