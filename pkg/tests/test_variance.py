import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unbiasedmc.samplers import BlackScholes
from unbiasedmc.solver import Provenance
from unbiasedmc.variance import (
    LadderPool,
    LevelStats,
    betas_from_stats,
    estimate_betas,
    estimate_level_stats,
)

import oracles

# exact first-level coefficient of the test setup, from the quadrature oracle
BS_BETA1 = 5.337833951481991e-05
BS_BETA1_PRINTED = 5.51e-5

CONST = BlackScholes(r=0.0, sigma=0.0, s0=1.5, strike=1.0)   # payoff 0.5 on every path


def stats(n, gap_n, gap_prev, mean_y=0.1, mean_y_sq=0.05, **kw):
    return LevelStats(n=n, mean_yn=kw.get("mean_yn", mean_y), mean_sq_gap_n=gap_n,
                      mean_sq_gap_prev=gap_prev, var_diff=kw.get("var_diff", 0.0), samples=1000,
                      proxy_level=10, mean_yprev=kw.get("mean_yprev", 0.0), mean_y=mean_y,
                      mean_y_sq=mean_y_sq)


def test_quadrature_oracle_is_frozen():
    assert oracles.bs_first_level_beta(0.05, 0.2) == pytest.approx(BS_BETA1, rel=1e-8)


# --- degenerate constant payoff --------------------------------------------


def test_constant_payoff_stats():
    for n in (0, 1, 3):
        s = estimate_level_stats(CONST, "independent", n, proxy_level=4, samples=1000)
        assert s.mean_sq_gap_n == 0.0
        assert s.mean_yn == 0.5
        if n > 0:
            assert s.var_diff == 0.0
            assert s.mean_sq_gap_prev == 0.0


def test_first_level_gap_is_second_moment():
    pool = LadderPool(BlackScholes(), proxy_level=3, samples=2000, seed=1)
    s = pool.stats(0)
    assert s.mean_sq_gap_prev == pytest.approx(np.mean(pool.Y[:, -1] ** 2), rel=1e-14)
    assert s.mean_sq_gap_prev == pytest.approx(s.mean_y_sq, rel=1e-14)


def test_constant_payoff_clamps_every_beta():
    b = estimate_betas(CONST, "coupled", levels=3, proxy_level=4, samples=1000)
    assert b.values == (1e-12,) * 4
    assert b.provenance.clamp_warnings == (0, 1, 2, 3)
    assert b.raw[0] == pytest.approx(0.25)
    assert b.mean_y == 0.5


def test_clamp_floor_is_configurable():
    b = estimate_betas(CONST, "independent", levels=2, proxy_level=3, samples=1000, floor=1e-9)
    assert min(b.values) == 1e-9


# --- algebra ---------------------------------------------------------------


def test_coupled_beta_identity():
    q0, q1, s, e = 0.04, 0.001, 0.06, 0.1
    st0 = stats(0, q0, s, mean_y=e, mean_y_sq=s)
    st1 = stats(1, q1, q0, mean_y=e, mean_y_sq=s)
    b = betas_from_stats([st0, st1], "coupled")
    assert b.values[0] == pytest.approx(s - q0 - e * e)
    assert b.values[1] == pytest.approx(q0 - q1)
    assert b.provenance.clamp_warnings == ()


def test_independent_beta_identity():
    ey = 0.1
    st0 = stats(0, 0.0, 0.0, mean_y=ey, var_diff=0.03, mean_yn=0.09, mean_yprev=0.0)
    st1 = stats(1, 0.0, 0.0, mean_y=ey, var_diff=0.002, mean_yn=0.098, mean_yprev=0.09)
    b = betas_from_stats([st0, st1], "independent")
    v0 = 0.03 + ey ** 2 - (ey - 0.09) ** 2
    assert b.values[0] == pytest.approx(v0 - ey ** 2)
    assert b.values[1] == pytest.approx(0.002 + (ey - 0.09) ** 2 - (ey - 0.098) ** 2)


def test_stats_must_be_contiguous():
    with pytest.raises(ValueError, match="contiguous"):
        betas_from_stats([stats(0, 0.1, 0.2), stats(2, 0.0, 0.1)], "coupled")


def test_clamp_keeps_provenance():
    prov = Provenance("bs", "abc", 10, 1000, 7)
    b = betas_from_stats([stats(0, 0.1, 0.2), stats(1, 0.2, 0.1)], "coupled", provenance=prov)
    assert b.values[1] == 1e-12
    assert b.provenance.clamp_warnings == (1,)
    assert b.provenance.param_hash == "abc" and b.provenance.seed == 7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 5))
def test_coupled_telescoping(seed, M):
    pool = LadderPool(BlackScholes(sigma=0.4), proxy_level=6, samples=1000, seed=seed)
    b = estimate_betas(BlackScholes(sigma=0.4), "coupled", levels=M, proxy_level=6, pool=pool)
    y = pool.Y[:, -1]
    lhs = sum(b.raw)
    rhs = np.mean(y ** 2) - np.mean((pool.Y[:, M] - y) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_clamped_series_positive(seed):
    b = estimate_betas(BlackScholes(), "independent", levels=4, proxy_level=5, samples=1000, seed=seed)
    assert all(v > 0 for v in b.values)


# --- errors ----------------------------------------------------------------


def test_proxy_must_exceed_level():
    with pytest.raises(ValueError, match="proxy_level"):
        estimate_level_stats(BlackScholes(), "coupled", 4, proxy_level=4, samples=1000)
    with pytest.raises(ValueError, match="proxy_level"):
        estimate_betas(BlackScholes(), levels=5, proxy_level=5, samples=1000)


def test_sample_floor():
    with pytest.raises(ValueError, match="1000"):
        LadderPool(BlackScholes(), 3, samples=999)


def test_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        estimate_betas(BlackScholes(), "antithetic", levels=1, proxy_level=2, samples=1000)


def test_pool_reproducible_and_worker_independent():
    a = LadderPool(BlackScholes(), 10, samples=9000, seed=3)
    b = LadderPool(BlackScholes(), 10, samples=9000, seed=3, workers=2)
    np.testing.assert_array_equal(a.Y, b.Y)


def test_beta_source_matches_batch_estimate():
    pool = LadderPool(BlackScholes(), 5, samples=2000, seed=4)
    b = estimate_betas(BlackScholes(), "coupled", levels=4, proxy_level=5, pool=pool)
    src = pool.beta_source("coupled")
    assert [src(n) for n in range(5)] == list(b.values)


# --- desk scale ------------------------------------------------------------


def _first_level_gap(pool):
    Y = pool.Y
    y = Y[:, -1]
    w = (Y[:, 0] - y) ** 2 - (Y[:, 1] - y) ** 2
    return w.mean(), w.std(ddof=1) / math.sqrt(w.size)


@pytest.mark.slow
def test_bs_first_level_beta_within_three_se(bs_pool, bs_spec):
    b = estimate_betas(bs_spec, "coupled", levels=2, proxy_level=10, pool=bs_pool)
    est, se = _first_level_gap(bs_pool)
    assert b.values[1] == pytest.approx(est, rel=1e-12)
    assert abs(est - BS_BETA1) < 3 * se


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="printed coefficient sits about 4 standard errors above the "
                                        "exact value at this sample size")
def test_bs_first_level_beta_against_printed_value(bs_pool):
    est, se = _first_level_gap(bs_pool)
    assert abs(est - BS_BETA1_PRINTED) < 3 * se


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the single drift-implicit Milstein recursion omits the Levy area, "
                                       "so coupled differences decay at rate 2 per level, not 4")
def test_heston_ratio_near_four(heston_pool):
    b = estimate_betas(heston_pool.spec, "coupled", levels=3, proxy_level=10, pool=heston_pool)
    assert 3.5 < b.values[1] / b.values[2] < 4.5


@pytest.mark.slow
def test_heston_ratio_near_two(heston_pool):
    b = estimate_betas(heston_pool.spec, "coupled", levels=5, proxy_level=10, pool=heston_pool)
    for n in (2, 3, 4):
        assert 1.5 < b.values[n] / b.values[n + 1] < 2.5


def test_heston_gap_scales_with_vol_of_vol_squared():
    from unbiasedmc.samplers import Heston
    lo = estimate_betas(Heston(sigma=0.05), levels=4, proxy_level=6, samples=20_000, seed=2)
    hi = estimate_betas(Heston(sigma=0.25), levels=4, proxy_level=6, samples=20_000, seed=2)
    assert 15 < hi.values[4] / lo.values[4] < 40
