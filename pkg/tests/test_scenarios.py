import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gridrisk.config import resolve_case
from gridrisk.scenarios import (
    DEFAULT_LOAD_MARGINALS,
    DisaggregationError,
    NotPositiveDefiniteError,
    TruncatedNormal,
    Uniform,
    Weibull,
    WindCurve,
    cholesky,
    disaggregate,
    generate_scenarios,
    lhs_first_step,
    lhs_unit,
    marginal_from_dict,
    marginal_to_dict,
    norm_ppf,
    participation_factors,
    rank_match,
    read_scenarios_csv,
    sample_correlated,
    wind_power,
    write_scenarios_csv,
)


@pytest.fixture(scope="module")
def grid6():
    return resolve_case("case6z")


# -- cholesky ------------------------------------------------------------------


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))


def test_cholesky_two_by_two():
    L = cholesky(np.array([[1.0, 0.5], [0.5, 1.0]]))
    np.testing.assert_allclose(L, [[1, 0], [0.5, math.sqrt(0.75)]], atol=1e-15)


def test_cholesky_random_spd():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6))
    C = A @ A.T + 6 * np.eye(6)
    L = cholesky(C)
    assert np.allclose(np.triu(L, 1), 0)
    assert np.abs(L @ L.T - C).max() <= 1e-10


def test_cholesky_names_failing_pivot():
    C = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]])
    with pytest.raises(NotPositiveDefiniteError) as exc:
        cholesky(C)
    assert exc.value.pivot == 2


# -- marginals -------------------------------------------------------------------


def test_norm_ppf_accuracy():
    u = np.concatenate([np.linspace(1e-12, 1e-6, 50), np.linspace(1e-6, 1 - 1e-6, 5000)])
    np.testing.assert_allclose(norm_ppf(u), stats.norm.ppf(u), atol=1e-9, rtol=0)


@pytest.mark.parametrize("m, ref", [
    (TruncatedNormal(50, 15, 10, 90), stats.truncnorm((10 - 50) / 15, (90 - 50) / 15, loc=50, scale=15)),
    (Weibull(2.0, 8.0), stats.weibull_min(2.0, scale=8.0)),
])
def test_marginal_cdf_ppf_against_scipy(m, ref):
    u = np.linspace(0.001, 0.999, 101)
    np.testing.assert_allclose(m.ppf(u), ref.ppf(u), rtol=1e-9)
    x = ref.ppf(u)
    np.testing.assert_allclose(m.cdf(x), u, atol=1e-9)
    assert m.mean() == pytest.approx(ref.mean(), rel=1e-9)


def test_truncated_normal_stays_in_bounds():
    m = TruncatedNormal(50, 15, 10, 90)
    x = m.ppf(np.array([0.0, 1e-300, 0.5, 1 - 1e-16, 1.0]))
    assert np.all((x >= 10) & (x <= 90))


@pytest.mark.parametrize("bad", [dict(mu=0, sigma=0, a=0, b=1), dict(mu=0, sigma=1, a=2, b=1)])
def test_truncated_normal_invariants(bad):
    with pytest.raises(ValueError):
        TruncatedNormal(**bad)


def test_weibull_invariants():
    with pytest.raises(ValueError):
        Weibull(0.0, 1.0)


@pytest.mark.parametrize("m", [TruncatedNormal(75, 20, 25, 125), Weibull(1.8, 8.2), Uniform(0, 3)])
def test_marginal_dict_round_trip(m):
    assert marginal_from_dict(marginal_to_dict(m)) == m


# -- sampler -------------------------------------------------------------------


def test_sampler_is_deterministic_and_chunkable():
    margs = list(DEFAULT_LOAD_MARGINALS)
    C = np.eye(3)
    a = sample_correlated(40, 5, margs, C, seed=11)
    b = sample_correlated(40, 5, margs, C, seed=11)
    np.testing.assert_array_equal(a.values, b.values)
    head = sample_correlated(15, 5, margs, C, seed=11)
    tail = sample_correlated(25, 5, margs, C, seed=11, start=15)
    np.testing.assert_array_equal(np.concatenate([head.values, tail.values]), a.values)
    c = sample_correlated(40, 5, margs, C, seed=12)
    assert not np.array_equal(a.values, c.values)


def test_independent_columns_are_uncorrelated():
    m = TruncatedNormal(50, 15, 10, 90)
    d = sample_correlated(20000, 3, [m, m], np.eye(2), seed=5)
    for t in range(3):
        r = np.corrcoef(d.values[:, t, 0], d.values[:, t, 1])[0, 1]
        assert abs(r) <= 0.05


def test_walk_structure_and_marginals():
    C = np.array([[1.0, 0.4], [0.4, 1.0]])
    margs = [TruncatedNormal(50, 15, 10, 90), Weibull(2.0, 8.0)]
    d = sample_correlated(8000, 6, margs, C, seed=2)
    ref = [stats.truncnorm(-40 / 15, 40 / 15, loc=50, scale=15).cdf, stats.weibull_min(2.0, scale=8.0).cdf]
    for t in range(6):
        r = np.corrcoef(d.latent[:, t].T)[0, 1]
        assert abs(r - 0.4) <= 0.05
        for j in range(2):
            assert stats.kstest(d.values[:, t, j], ref[j]).statistic <= 0.03
    # consecutive latent states of a scaled random walk correlate as sqrt(t / (t + 1))
    for t in range(1, 5):
        r = np.corrcoef(d.latent[:, t - 1, 0], d.latent[:, t, 0])[0, 1]
        assert abs(r - math.sqrt(t / (t + 1))) <= 0.05


def test_sampler_rejects_mismatched_covariance():
    with pytest.raises(ValueError):
        sample_correlated(5, 2, list(DEFAULT_LOAD_MARGINALS), np.eye(2), seed=0)


# -- latin hypercube -----------------------------------------------------------


def test_lhs_quartiles():
    u = lhs_unit(4, 3, seed=0)
    for j in range(3):
        assert sorted(np.floor(u[:, j] * 4).astype(int)) == [0, 1, 2, 3]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10**6))
def test_lhs_one_point_per_stratum(n, seed):
    u = lhs_unit(n, 2, seed)
    for j in range(2):
        np.testing.assert_array_equal(np.sort(np.floor(u[:, j] * n)), np.arange(n))


def test_lhs_truncated_normal_mean():
    m = TruncatedNormal(50, 15, 10, 90)
    x = lhs_first_step(1000, [m], seed=4)[:, 0]
    assert abs(x.mean() - m.mean()) <= 1.0


def test_lhs_weibull_positive():
    assert np.all(lhs_first_step(500, [Weibull(2.2, 7.8)], seed=1) > 0)


def test_rank_match_keeps_ranks_and_values():
    rng = np.random.default_rng(0)
    ref, rep = rng.random((50, 2)), rng.random((50, 2))
    out = rank_match(ref, rep)
    for j in range(2):
        np.testing.assert_array_equal(np.sort(out[:, j]), np.sort(rep[:, j]))
        np.testing.assert_array_equal(np.argsort(out[:, j]), np.argsort(ref[:, j]))


# -- wind curve ----------------------------------------------------------------


def test_wind_power_points():
    assert wind_power(1.0) == 0.0
    assert wind_power(15.0) == 100.0
    assert wind_power(8.0) == pytest.approx(100 * 511 / 3374, abs=1e-12)
    assert wind_power(0.5) == 0.0 and wind_power(30.0) == 100.0


@settings(max_examples=50)
@given(st.floats(0, 40), st.floats(0, 40))
def test_wind_power_monotone(a, b):
    lo, hi = sorted((a, b))
    assert wind_power(lo) <= wind_power(hi)


def test_wind_curve_invariants():
    with pytest.raises(ValueError):
        WindCurve(v_min=5, v_max=5)


# -- disaggregation ------------------------------------------------------------


def test_disaggregate_symmetric():
    out = disaggregate(np.array([90.0]), np.full(3, 1 / 3), np.zeros(3, int))
    np.testing.assert_allclose(out, [30, 30, 30])


def test_disaggregate_single_bus_passthrough():
    assert disaggregate(np.array([7.5]), np.array([1.0]), np.array([0]))[0] == 7.5


def test_disaggregate_bad_factors_names_zone():
    with pytest.raises(DisaggregationError, match="zone 1"):
        disaggregate(np.array([1.0, 2.0]), np.array([1.0, 0.5, 0.4]), np.array([0, 1, 1]))


def test_fixture_sums_back(grid6):
    scen = generate_scenarios(grid6, 50, 6, seed=0)
    Z = grid6.n_zone
    for z in range(Z):
        mask = grid6.zone_masks[z]
        assert np.abs(scen.bus_load[..., mask].sum(-1) - scen.zonal[..., z]).max() <= 1e-9
        assert np.abs(scen.bus_wind[..., mask].sum(-1) - scen.zonal[..., Z + z]).max() <= 1e-9
    f = participation_factors(grid6, "load")
    assert np.all(f >= 0)


def test_scenario_invariants(grid6):
    scen = generate_scenarios(grid6, 200, 12, seed=3)
    Z = grid6.n_zone
    assert np.all(scen.zonal[..., :Z] >= 0)
    cap = np.array([sum(g.p_max for g in grid6.wind if grid6.bus_zone[grid6.bus_index[g.bus]] == z)
                    for z in range(Z)])
    assert np.all(scen.zonal[..., Z:] >= 0) and np.all(scen.zonal[..., Z:] <= cap + 1e-12)


def test_first_step_is_stratified(grid6):
    n = 64
    scen = generate_scenarios(grid6, n, 4, seed=9)
    for j in range(scen.u.shape[-1]):
        np.testing.assert_array_equal(np.sort(np.floor(scen.u[:, 0, j] * n)), np.arange(n))


def test_csv_round_trip(grid6, tmp_path):
    scen = generate_scenarios(grid6, 7, 5, seed=1)
    p = tmp_path / "s.csv"
    write_scenarios_csv(p, scen, config_hash="abc")
    back = read_scenarios_csv(p, grid6)
    np.testing.assert_array_equal(back.zonal, scen.zonal)
    np.testing.assert_array_equal(back.bus_load, scen.bus_load)
    np.testing.assert_array_equal(back.u, scen.u)
    write_scenarios_csv(tmp_path / "again.csv", back, config_hash="abc")
    assert (tmp_path / "again.csv").read_bytes() == p.read_bytes()
