import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridrisk.config import resolve_case
from gridrisk.grid import (
    CaseFormatError,
    GridValidationError,
    SingularNetworkError,
    compute_ptdf,
    parse_case,
    serialize_case,
    validate_grid,
)

from oracles import dc_flows

TWO_BUS = """
[zone]
1 A
[bus]
1 1 0.0
2 1 10.0
[gen]
1 1 thermal 0 50 10 0 0 0 1 1 50
[branch]
1 1 2 0.1 100
"""

TRIANGLE = """
[options]
slack_bus 1
[zone]
1 A
[bus]
1 1 0
2 1 0
3 1 0
[gen]
1 1 thermal 0 50 10 0 0 0 1 1 50
[branch]
1 1 2 0.1 100
2 1 3 0.1 100
3 3 2 0.1 100
"""


@pytest.fixture(scope="module")
def grid6():
    return resolve_case("case6z")


def test_two_bus_parses():
    g = parse_case(TWO_BUS)
    assert g.n_bus == 2 and g.n_branch == 1
    assert len(g.thermal) == 1 and not g.wind


def test_bundled_fixture_shape(grid6):
    assert grid6.n_bus == 6 and grid6.n_zone == 3
    assert len(grid6.thermal) == 6 and len(grid6.wind) == 3
    assert validate_grid(grid6) == []
    # every turbine has the same rating
    assert len({g.p_max for g in grid6.wind}) == 1


def test_round_trip(grid6):
    text = serialize_case(grid6)
    again = parse_case(text, name=grid6.name)
    assert again == grid6
    assert serialize_case(again) == text


def test_dangling_branch_reference():
    bad = TWO_BUS.replace("1 1 2 0.1 100", "1 1 99 0.1 100")
    with pytest.raises(GridValidationError, match="bus 99"):
        parse_case(bad)


def test_pmin_above_pmax_names_generator():
    g = parse_case(TWO_BUS.replace("thermal 0 50", "thermal 60 50"), validate=False)
    problems = validate_grid(g)
    assert len(problems) == 1 and "generator 1" in problems[0]


def test_empty_zone_is_reported():
    g = parse_case(TWO_BUS.replace("1 A\n", "1 A\n2 B\n"), validate=False)
    problems = validate_grid(g)
    assert len(problems) == 1 and "zone 2" in problems[0]


@pytest.mark.parametrize("text, fragment", [
    ("[bus]\n1 1\n", "3 or 5"),
    ("[nope]\n", "unknown section"),
    ("1 1 0\n", "before any section"),
    ("[gen]\n1 1 solar 0 1 0 0 0 0 0 0 1\n[bus]\n1 1 0\n", "thermal|wind"),
    ("[bus]\n1 x 0\n", "zone"),
])
def test_format_errors(text, fragment):
    with pytest.raises(CaseFormatError, match=fragment):
        parse_case(text)


def test_format_error_carries_line_number():
    with pytest.raises(CaseFormatError) as exc:
        parse_case("[zone]\n1 A\n[bus]\n1 1 zero\n")
    assert exc.value.line == 4


def test_disconnected_network_is_singular():
    text = TWO_BUS + "[bus]\n3 1 0\n"
    g = parse_case(text, validate=False)
    assert any("disconnected" in p for p in validate_grid(g))
    with pytest.raises(SingularNetworkError) as exc:
        compute_ptdf(g)
    assert exc.value.component == (3,)


def test_ptdf_two_bus_single_path():
    ptdf = compute_ptdf(parse_case(TWO_BUS))
    np.testing.assert_allclose(ptdf.flows(np.array([-10.0, 10.0])), [-10.0])


def test_ptdf_triangle_splits_two_to_one():
    ptdf = compute_ptdf(parse_case(TRIANGLE))
    flows = ptdf.flows(np.array([-9.0, 9.0, 0.0]))
    # power moves 2 -> 1 directly and 2 -> 3 -> 1; branch 3 is oriented 3 -> 2
    np.testing.assert_allclose(flows, [-6.0, -3.0, -3.0], atol=1e-12)


def test_ptdf_slack_column_zero(grid6):
    ptdf = compute_ptdf(grid6)
    s = grid6.bus_index[grid6.slack_bus]
    assert np.all(ptdf.entries[:, s] == 0.0)


def test_ptdf_is_read_only(grid6):
    with pytest.raises(ValueError):
        compute_ptdf(grid6).entries[0, 0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-200, 200), min_size=6, max_size=6))
def test_ptdf_matches_angle_solution(grid6, raw):
    p = np.array(raw) - np.mean(raw)
    np.testing.assert_allclose(compute_ptdf(grid6).flows(p), dc_flows(grid6, p), atol=1e-9)


def test_zone_partition_exhaustive(grid6):
    masks = grid6.zone_masks
    assert masks.shape == (3, 6)
    np.testing.assert_array_equal(masks.sum(axis=0), np.ones(6))
