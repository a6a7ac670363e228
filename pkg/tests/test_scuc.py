import numpy as np
import pytest

from gridrisk.config import resolve_case
from gridrisk.grid import parse_case
from gridrisk.scenarios import generate_scenarios
from gridrisk.scuc import (
    ScucConfig,
    ScucInputError,
    build_scuc,
    cause_aware_shedding,
    extract_qois,
    shed_penalties,
    solve_dispatch_fixed_uc,
    solve_milp,
    split_shed,
    with_config,
)

from oracles import commitment_ok, dispatch_cost, exhaustive_scuc

FAST = ScucConfig(lp_method="highs")

ONE_BUS = """
[zone]
1 A
[bus]
1 1 0
[gen]
1 1 thermal 0 100 10 0 0 0 1 1 1000
"""

TWO_GEN = """
[zone]
1 A
[bus]
1 1 0
[gen]
1 1 thermal 10 60 10 5 30 0 1 1 1000
2 1 thermal 5 50 20 2 10 0 1 1 1000
"""

# equal reactances: 2/3 of a 1 -> 2 transfer uses the direct branch
TRIANGLE = """
[options]
slack_bus 1
[zone]
1 A
2 B
[bus]
1 1 0
2 2 0
3 1 0
[gen]
1 1 thermal 0 200 10 0 0 0 1 1 1000
[branch]
1 1 2 0.1 10
2 1 3 0.1 100
3 3 2 0.1 100
"""


@pytest.fixture(scope="module")
def grid6():
    return resolve_case("case6z")


def _solve(grid, load, wind=None, config=FAST, **kw):
    load = np.atleast_2d(np.asarray(load, float))
    wind = np.zeros_like(load) if wind is None else np.atleast_2d(wind)
    p = build_scuc(grid, load, wind, config, **kw)
    return p, solve_milp(p)


# -- formulation --------------------------------------------------------------


def test_single_unit_serves_load():
    g = parse_case(ONE_BUS)
    _, sol = _solve(g, [[50.0]], config=ScucConfig(reserve_fraction=0.0, lp_method="highs"))
    assert sol.uc[0, 0] == 1
    assert sol.dispatch[0, 0] == pytest.approx(50.0)
    assert sol.shed.sum() == pytest.approx(0.0)


def test_capacity_shortfall_is_shed():
    g = parse_case(ONE_BUS)
    _, sol = _solve(g, [[130.0]], config=ScucConfig(reserve_fraction=0.0, lp_method="highs"))
    assert sol.shed.sum() == pytest.approx(30.0)


def test_zero_load_costs_nothing_after_switch_off():
    g = parse_case(TWO_GEN)
    _, sol = _solve(g, np.zeros((3, 1)))
    assert sol.shed.sum() == 0.0
    # both units start ON with p_min; switching off at t=1 avoids no-load cost
    assert sol.uc.sum() == 0
    assert sol.objective == pytest.approx(0.0)


def test_constraint_counts(grid6):
    T = 4
    p = build_scuc(grid6, np.ones((T, 6)), np.zeros((T, 6)), FAST)
    th = grid6.thermal
    expected = {
        "balance": T,
        "line": 2 * grid6.n_branch * T,
        "gen_limit": 2 * len(th) * T,
        "logic": len(th) * T,
        "min_up": sum(g.min_up > 1 for g in th) * T,
        "min_down": sum(g.min_down > 1 for g in th) * T,
        "ramp": 2 * sum(g.ramp_rate < g.p_max for g in th) * T,
        "reserve": T,
    }
    assert p.row_counts == expected
    assert p.lp.A_eq.shape[0] == expected["balance"] + expected["logic"]
    assert p.lp.A_ub.shape[0] == sum(expected.values()) - p.lp.A_eq.shape[0]
    assert p.lp.n == 4 * len(th) * T + len(grid6.wind) * T + 6 * T * FAST.shed_segments


def test_input_validation(grid6):
    with pytest.raises(ScucInputError):
        build_scuc(grid6, np.ones((2, 5)), np.ones((2, 5)))
    with pytest.raises(ScucInputError):
        build_scuc(grid6, -np.ones((2, 6)), np.zeros((2, 6)))
    with pytest.raises(ScucInputError):
        build_scuc(grid6, np.ones((2, 6)), np.zeros((2, 6)), ScucConfig(shed_penalty=5.0))
    with pytest.raises(ScucInputError):
        build_scuc(grid6, np.ones((2, 6)), np.zeros((2, 6)), ScucConfig(reserve_fraction=1.0))


def test_shed_penalties_increase_and_stay_close(grid6):
    v = shed_penalties(grid6, ScucConfig())
    assert v.shape == (6, 10)
    assert len(np.unique(v)) == v.size
    assert v.min() == 1000.0 and v.max() < 1001.0


# -- oracle equivalence ----------------------------------------------------------


def test_two_gen_matches_enumeration():
    g = parse_case(TWO_GEN)
    load = np.array([[40.0], [90.0]])
    wind = np.zeros_like(load)
    _, sol = _solve(g, load, config=ScucConfig(lp_method="simplex", gap=1e-9))
    ref, _ = exhaustive_scuc(g, load, wind, reserve_fraction=0.05)
    assert sol.objective == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("i", range(3))
def test_fixture_matches_enumeration(grid6, i):
    scen = generate_scenarios(grid6, 3, 2, seed=42)
    load, wind = scen.bus_load[i], scen.bus_wind[i]
    _, sol = _solve(grid6, load, wind, config=ScucConfig(lp_method="highs", gap=1e-7))
    ref, ref_uc = exhaustive_scuc(grid6, load, wind)
    assert sol.objective == pytest.approx(ref, rel=1e-5)


def test_simplex_and_highs_agree(grid6):
    scen = generate_scenarios(grid6, 1, 3, seed=8)
    args = (grid6, scen.bus_load[0], scen.bus_wind[0])
    a = solve_milp(build_scuc(*args, ScucConfig(lp_method="simplex", gap=1e-7)))
    b = solve_milp(build_scuc(*args, ScucConfig(lp_method="highs", gap=1e-7)))
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


# -- solution invariants -------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_solution(grid6):
    scen = generate_scenarios(grid6, 4, 6, seed=1)
    i = int(np.argmax(scen.bus_load.sum(axis=(1, 2))))
    p = build_scuc(grid6, scen.bus_load[i], scen.bus_wind[i], FAST)
    return p, solve_milp(p)


def test_solution_invariants(grid6, fixture_solution):
    p, sol = fixture_solution
    th = grid6.thermal
    pmin = np.array([g.p_min for g in th])[:, None]
    pmax = np.array([g.p_max for g in th])[:, None]
    assert set(np.unique(sol.uc)) <= {0, 1}
    assert np.all(sol.dispatch >= pmin * sol.uc - 1e-6)
    assert np.all(sol.dispatch <= pmax * sol.uc + 1e-6)
    assert np.all(sol.shed >= 0) and np.all(sol.shed <= p.bus_load + 1e-6)
    inj = sol.injections(p)
    assert np.abs(inj.sum(axis=1)).max() <= 1e-6
    assert np.all(np.abs(sol.flows) <= grid6.flow_limits + 1e-6)
    for gi, g in enumerate(th):
        assert commitment_ok(tuple(sol.uc[gi]), g.min_up, g.min_down)
    # reserve margin holds at every step
    head = (pmax * sol.uc).sum(axis=0) - sol.dispatch.sum(axis=0)
    assert np.all(head >= p.config.reserve_fraction * p.bus_load.sum(axis=1) - 1e-6)


def test_qois_are_consistent(grid6, fixture_solution):
    p, sol = fixture_solution
    q = extract_qois(sol, p)
    np.testing.assert_allclose(q.gen_zone.sum(axis=0), q.gen_system)
    np.testing.assert_allclose(q.shed_zone.sum(axis=0), q.shed_system)
    assert np.abs(q.injections.sum(axis=1)).max() <= 1e-6
    np.testing.assert_allclose(q.flows, p.ptdf.flows(q.injections), atol=1e-9)


def test_solve_is_deterministic(grid6):
    scen = generate_scenarios(grid6, 1, 4, seed=3)
    args = (grid6, scen.bus_load[0], scen.bus_wind[0], FAST)
    a, b = solve_milp(build_scuc(*args)), solve_milp(build_scuc(*args))
    assert a.objective == b.objective
    np.testing.assert_array_equal(a.dispatch, b.dispatch)
    np.testing.assert_array_equal(a.uc, b.uc)


def test_fixed_uc_restriction_is_consistent(fixture_solution):
    p, sol = fixture_solution
    fixed = solve_dispatch_fixed_uc(p, sol.uc)
    assert fixed.objective <= sol.objective + 1e-6


def test_fixed_uc_dispatch_matches_angle_form(grid6, fixture_solution):
    p, sol = fixture_solution
    fixed = solve_dispatch_fixed_uc(p, sol.uc)
    ref = dispatch_cost(grid6, p.bus_load, p.bus_wind, sol.uc)
    variable = fixed.objective - sum(
        g.cost_noload * sol.uc[i].sum()
        + g.startup_cost * np.sum(np.diff(np.concatenate([[1], sol.uc[i]])) == 1)
        + g.shutdown_cost * np.sum(np.diff(np.concatenate([[1], sol.uc[i]])) == -1)
        for i, g in enumerate(grid6.thermal)
    )
    assert variable == pytest.approx(ref, rel=1e-7)


def test_all_on_ample_capacity_no_shed():
    g = parse_case(TRIANGLE.replace("1 1 2 0.1 10", "1 1 2 0.1 100"))
    p = build_scuc(g, [[0, 30, 0]], [[0, 0, 0]], FAST)
    assert solve_dispatch_fixed_uc(p, np.ones((1, 1))).shed.sum() == pytest.approx(0.0)


def test_congested_triangle_sheds_with_ample_generation():
    g = parse_case(TRIANGLE)
    p = build_scuc(g, [[0, 30, 0]], [[0, 0, 0]], FAST)
    sol = solve_dispatch_fixed_uc(p, np.ones((1, 1)))
    # branch 1 carries 2/3 of the transfer and is capped at 10 MW -> 15 MW arrives
    assert sol.shed.sum() == pytest.approx(15.0)


def test_shed_weakly_decreases_with_penalty(fixture_solution):
    p, _ = fixture_solution
    sheds = [solve_milp(with_config(p, shed_penalty=v)).shed.sum() for v in (100.0, 1000.0, 10000.0)]
    assert sheds[0] >= sheds[1] - 1e-6 and sheds[1] >= sheds[2] - 1e-6


# -- cause-aware decomposition -------------------------------------------------


def test_no_shed_gives_zero_triple():
    g = parse_case(ONE_BUS)
    split, _, _ = cause_aware_shedding(build_scuc(g, [[20.0]], [[0.0]], FAST))
    assert split.total.sum() == split.reserve.sum() == split.nonreserve.sum() == 0.0


def test_reserve_only_fixture():
    g = parse_case(ONE_BUS)
    # headroom 100 - P must cover 5% of 98 MW -> P <= 95.1, 2.9 MW shed
    split, _, _ = cause_aware_shedding(build_scuc(g, [[98.0]], [[0.0]], FAST))
    assert split.total[0] == pytest.approx(2.9)
    assert split.reserve[0] == pytest.approx(2.9)
    assert split.nonreserve[0] == 0.0
    assert split.clamped == 0


def test_congestion_only_fixture():
    g = parse_case(TRIANGLE)
    split, _, _ = cause_aware_shedding(build_scuc(g, [[0, 30, 0]], [[0, 0, 0]], FAST))
    assert split.total[0] == pytest.approx(15.0)
    assert split.reserve[0] == 0.0
    assert split.nonreserve[0] == pytest.approx(15.0)
    assert split.clamped == 0


def test_mixed_fixture_adds_up():
    g = parse_case(TRIANGLE.replace("0 200 10", "0 40 10"))
    load = np.array([[0, 30, 10], [0, 20, 19], [0, 5, 5]], float)
    split, _, _ = cause_aware_shedding(build_scuc(g, load, np.zeros_like(load), FAST))
    assert split.reserve.sum() > 0 and split.nonreserve.sum() > 0
    np.testing.assert_allclose(split.total, split.reserve + split.nonreserve, atol=1e-9)
    assert split.clamped == 0


def test_split_shed_clamps_and_counts():
    g = parse_case(TRIANGLE)
    total = np.array([[0.0, 1.0, 0.0]])
    reserve = np.array([[0.0, 3.0, 0.0]])
    split = split_shed(total, reserve, g)
    assert split.nonreserve[0] == 0.0
    assert split.clamped == 2  # system row and zone B
