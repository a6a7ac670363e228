import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridrisk.risk import (
    CompareThresholds,
    CostCurve,
    ReportMismatchError,
    RiskConfig,
    assess,
    compare_pathways,
    conditional_matrix,
    conditional_matrix_multistep,
    conditional_slices,
    divergence_csv,
    overload_cost,
    overload_indicator,
    p_multistep,
    plot_series,
    read_report,
    shed_cost,
    shed_indicator,
    significant_branches,
)

# 8 scenarios x 4 steps, one event series
IND = np.array([
    [1, 0, 0, 0],
    [1, 1, 0, 0],
    [1, 0, 0, 1],
    [0, 1, 1, 0],
    [0, 0, 0, 0],
    [1, 0, 1, 0],
    [0, 0, 0, 1],
    [1, 0, 0, 0],
], bool)


def test_multistep_hand_table():
    # five scenarios with the event at t=0; of these #1 (t=1) and #5 (t=2) recur within two steps
    p, n = p_multistep(IND, 0, 2)
    assert n == 5 and p == pytest.approx(2 / 5)
    # t=1: scenarios 1 and 3; only #3 recurs at t=2
    assert p_multistep(IND, 1, 2) == (0.5, 2)
    with pytest.raises(ValueError):
        p_multistep(IND, 2, 2)


def test_multistep_undefined_is_nan():
    p, n = p_multistep(np.zeros((5, 4), bool), 0, 1)
    assert math.isnan(p) and n == 0


def test_conditional_matrices_hand_table():
    ind = np.zeros((4, 3, 2), bool)
    ind[0, 0] = [1, 1]
    ind[1, 0] = [1, 0]
    ind[2, 0] = [1, 0]
    ind[0, 1] = [0, 1]
    ind[1, 2] = [1, 0]
    m, counts = conditional_matrix(ind, 0)
    assert counts.tolist() == [3, 1]
    np.testing.assert_allclose(m, [[1, 1 / 3], [1, 1]])
    mm, _ = conditional_matrix_multistep(ind, 0, 2)
    np.testing.assert_allclose(mm, [[1 / 3, 1 / 3], [0, 1]])
    s = conditional_slices(ind, 0, 2)
    np.testing.assert_allclose(s[0], [[0, 1 / 3], [0, 1]])
    np.testing.assert_allclose(s[1], [[1 / 3, 0], [0, 0]])
    m1, c1 = conditional_matrix(ind, 1)
    assert c1.tolist() == [0, 1] and np.isnan(m1[0]).all()


def test_cost_identities():
    psi = np.array([0.0, 1.5, 20.0])
    np.testing.assert_allclose(shed_cost(psi), 10 * psi)
    gamma = np.array([-100.0, 50.0, 90.0, -80.0])
    gmax = np.full(4, 100.0)
    tilde = np.abs(gamma) - 85.0
    np.testing.assert_allclose(overload_cost(gamma, gmax), np.maximum(tilde, 0))
    assert overload_indicator(gamma[None, None], gmax).ravel().tolist() == [True, False, True, False]


def test_piecewise_cost_integral():
    c = CostCurve((1.0, 3.0), (10.0,))
    np.testing.assert_allclose(c.integral([-1, 5, 10, 12]), [0, 5, 10, 16])
    assert CostCurve.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        CostCurve((1.0,), (5.0,))


def test_threshold_boundaries():
    assert shed_indicator([1e-3, 1.0001e-3]).tolist() == [False, True]
    assert overload_indicator(np.array([[[85.0, 85.0001]]]), np.array([100.0, 100.0])).ravel().tolist() == [False, True]


def _random_inputs(rng, N=60, T=5, Q=4):
    shed = np.where(rng.random((N, 3, T)) < 0.4, rng.uniform(0, 30, (N, 3, T)), 0.0)
    shed = np.concatenate([shed, shed.sum(axis=1, keepdims=True)], axis=1)
    flows = rng.normal(0, 70, (N, T, Q))
    return shed, flows, np.full(Q, 100.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_risk_decomposition_is_exact(seed, disc):
    rng = np.random.default_rng(seed)
    shed, flows, gmax = _random_inputs(rng)
    r = assess(shed, flows, gmax, RiskConfig(discount=disc), shed_scopes=("a", "b", "c", "system"),
               branch_ids=(1, 2, 3, 4))
    dT, T = 2, 5
    for t in range(T - dT):
        np.testing.assert_array_equal(r.risk_shed_total[:, t], r.risk_shed[:, t] + r.risk_shed_multi[:, t])
        np.testing.assert_array_equal(r.risk_over_total[0, t], r.risk_over[0, t] + r.risk_over_multi[0, t])
        w = [1 / (1 + d) if disc else 1.0 for d in (1, 2)]
        ahead = sum(w[d - 1] * (10 * shed[:, :, t + d]).mean(axis=0) for d in (1, 2))
        np.testing.assert_allclose(r.risk_shed_multi[:, t], ahead, rtol=1e-12)
    assert np.isnan(r.risk_shed_total[:, T - dT:]).all()
    assert np.isnan(r.p_shed_multi[:, T - dT:]).all()
    np.testing.assert_allclose(r.risk_shed, (10 * shed).mean(axis=0))
    np.testing.assert_allclose(r.risk_over[0], np.maximum(np.abs(flows) - 85, 0).mean(axis=0).sum(axis=1))


def test_independent_events_multistep_probability():
    # independent Bernoulli(p) steps: p(any of next two | now) = 1 - (1-p)^2
    rng = np.random.default_rng(1)
    ind = rng.random((50000, 4)) < 0.3
    p, _ = p_multistep(ind, 0, 2)
    assert p == pytest.approx(1 - 0.7**2, abs=0.01)


def test_significant_branches_ties_by_id():
    flows = np.zeros((2, 3, 4))
    flows[:, :, 2] = 90
    flows[:, :, 0] = 50
    flows[:, :, 3] = 50
    assert significant_branches(flows, np.full(4, 100.0), 3, branch_ids=[7, 8, 9, 10]) == [9, 7, 10]


def test_assess_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    shed, flows, gmax = _random_inputs(rng)
    kw = dict(shed_scopes=("a", "b", "c", "system"), branch_ids=(1, 2, 3, 4))
    with pytest.raises(ValueError):
        assess(shed[:, :, :3], flows, gmax, **kw)
    bad = shed.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        assess(bad, flows, gmax, **kw)


def test_report_round_trip_and_compare(tmp_path):
    rng = np.random.default_rng(2)
    shed, flows, gmax = _random_inputs(rng)
    kw = dict(shed_scopes=("a", "b", "c", "system"), branch_ids=(1, 2, 3, 4), branches=(2, 4))
    ref = assess(shed, flows, gmax, **kw)
    paths = ref.write(tmp_path)
    back = read_report(paths[0])
    assert back.to_json() == ref.to_json()
    assert back.branch_ids == (2, 4)
    rows = compare_pathways(ref, back)
    assert rows and not any(d.exceeded for d in rows)
    cand = assess(shed * 1.2, flows, gmax, source="gnn", **kw)
    rows = compare_pathways(ref, cand)
    risk = [d for d in rows if d.metric == "risk_shed" and d.reference > 0]
    assert all(d.rel_diff == pytest.approx(0.2) and d.exceeded for d in risk)
    assert divergence_csv(rows).count("\n") == len(rows) + 1
    assert "gnn_p_shed" in plot_series(cand)


def test_compare_nan_rule_and_mismatch():
    rng = np.random.default_rng(3)
    shed, flows, gmax = _random_inputs(rng)
    kw = dict(shed_scopes=("a", "b", "c", "system"), branch_ids=(1, 2, 3, 4))
    ref = assess(shed, flows, gmax, **kw)
    zero = assess(np.zeros_like(shed), flows, gmax, **kw)
    undefined = [d for d in compare_pathways(ref, zero) if d.metric == "p_shed_multi"
                 and not math.isnan(d.reference)]
    assert undefined and all(d.exceeded and math.isnan(d.candidate) for d in undefined)
    with pytest.raises(ReportMismatchError):
        compare_pathways(ref, assess(shed[:10], flows[:10], gmax, **kw))
    with pytest.raises(ReportMismatchError):
        compare_pathways(ref, assess(shed, flows, gmax, RiskConfig(epsilon=0.9), **kw))


def test_compare_thresholds_boundary():
    rng = np.random.default_rng(4)
    shed, flows, gmax = _random_inputs(rng)
    kw = dict(shed_scopes=("a", "b", "c", "system"), branch_ids=(1, 2, 3, 4))
    ref = assess(shed, flows, gmax, **kw)
    cand = assess(shed * 1.1, flows, gmax, **kw)
    rows = [d for d in compare_pathways(ref, cand, CompareThresholds(risk_rel=0.15)) if d.metric == "risk_shed"]
    assert rows and not any(d.exceeded for d in rows)
