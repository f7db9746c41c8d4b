import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unbiasedmc.samplers import (
    BlackScholes,
    Heston,
    HestonHullWhite,
    NoiseGrid,
    bs_closed_form_price,
    bs_milstein_ladder,
    cir_degrees_of_freedom,
    cir_step,
    coarsen_increments,
    draw_noise,
    european_call_payoff,
    heston_milstein_ladder,
    heston_step,
    hhw_ladder_from_paths,
    hhw_paths,
    model_from_dict,
    model_to_dict,
    ou_step,
    param_hash,
    simulate_ladder,
    subsample_paths,
)

import oracles

# frozen from the quadrature oracle
BS_PRICE = 0.10450583572185569


def rng(seed=0):
    return np.random.default_rng(seed)


# --- noise ---------------------------------------------------------------


def test_coarsen_pairs():
    np.testing.assert_array_equal(coarsen_increments([1.0, 2.0, 3.0, 4.0]), [3.0, 7.0])
    np.testing.assert_array_equal(coarsen_increments([[1.0, -1.0]]), [[0.0]])


def test_coarsen_odd_length():
    with pytest.raises(ValueError, match="odd"):
        coarsen_increments(np.ones(3))


@given(st.integers(1, 8))
def test_coarsen_preserves_total(level):
    x = rng(level).standard_normal(2 ** level)
    y = x
    for _ in range(level):
        y = coarsen_increments(y)
    assert y.shape == (1,)
    assert y[0] == pytest.approx(x.sum(), abs=1e-12)


def test_noise_variance():
    noise = draw_noise(BlackScholes(maturity=2.0), 3, 20000, rng())
    assert noise.steps == 8
    assert noise.increments[0].var() == pytest.approx(0.25, rel=0.03)


# --- models --------------------------------------------------------------


def test_model_round_trip_and_hash():
    spec = model_from_dict("heston", {"k": 2.0})
    assert spec.k == 2.0
    d = model_to_dict(spec)
    assert model_from_dict(d["model"], d["params"]) == spec
    assert param_hash(spec) == param_hash(Heston(k=2.0))
    assert param_hash(spec) != param_hash(Heston())


def test_model_rejects_unknown_param():
    with pytest.raises(ValueError, match="volatility"):
        model_from_dict("bs", {"volatility": 0.3})


def test_feller_violation_rejected():
    with pytest.raises(ValueError, match="Feller"):
        Heston(k=0.1, theta=0.01, sigma=0.5)
    with pytest.raises(ValueError, match="Feller"):
        HestonHullWhite(k=0.1, theta=0.01, sigma=0.5)


# --- payoff and closed form ----------------------------------------------


def test_payoff_examples():
    np.testing.assert_allclose(european_call_payoff([0.5, 1.0, 1.5], 1.0), [0.0, 0.0, 0.5])
    assert european_call_payoff(2.0, 1.0, 0.5) == 0.5


@given(st.floats(0, 10), st.floats(0, 10))
def test_payoff_monotone_in_price(a, b):
    lo, hi = sorted((a, b))
    assert european_call_payoff(lo, 1.0) <= european_call_payoff(hi, 1.0)


def test_closed_form_matches_quadrature():
    assert bs_closed_form_price(BlackScholes()) == pytest.approx(BS_PRICE, abs=1e-12)
    for s0, K, r, sig, T in [(1.0, 1.2, 0.0, 0.3, 2.0), (100.0, 90.0, 0.03, 0.15, 0.5)]:
        ref = oracles.lognormal_call_by_quadrature(s0, K, r, sig, T)
        got = bs_closed_form_price(BlackScholes(r, sig, s0, T, K))
        assert got == pytest.approx(ref, rel=1e-9)


def test_closed_form_limits():
    # tiny vol: intrinsic value of the forward
    p = bs_closed_form_price(BlackScholes(0.05, 1e-8, 1.0, 1.0, 1.0))
    assert p == pytest.approx(1.0 - math.exp(-0.05), abs=1e-9)
    # deep out of the money
    assert bs_closed_form_price(BlackScholes(strike=100.0)) < 1e-12


# --- Black-Scholes ladder ------------------------------------------------


def test_bs_deterministic_without_vol_and_rate():
    spec = BlackScholes(r=0.0, sigma=0.0, s0=1.5, strike=1.0)
    lad = simulate_ladder(spec, 5, 10, rng())
    np.testing.assert_array_equal(lad, 0.5)


def test_bs_single_step():
    spec = BlackScholes(strike=1e-9)
    lad = bs_milstein_ladder(spec, 0, np.zeros((1, 1)))
    assert lad[0, 0] == pytest.approx((1.03 - 1e-9) * math.exp(-0.05), rel=1e-14)
    lad = bs_milstein_ladder(spec, 0, np.full((1, 1), 0.1))
    assert lad[0, 0] == pytest.approx((1.05 + 0.02 + 0.02 * (0.01 - 1) - 1e-9) * math.exp(-0.05), rel=1e-14)


def test_bs_coupling_is_bit_exact():
    spec = BlackScholes()
    noise = draw_noise(spec, 6, 50, rng(3))
    lad = bs_milstein_ladder(spec, 6, noise)
    coarse = noise
    for k in range(6, -1, -1):
        alone = bs_milstein_ladder(spec, k, coarse, min_level=k)
        np.testing.assert_array_equal(lad[:, k], alone[:, 0])
        if k:
            coarse = coarse.coarsen()


def test_bs_min_level_slices():
    spec = BlackScholes()
    noise = draw_noise(spec, 4, 8, rng(1))
    np.testing.assert_array_equal(bs_milstein_ladder(spec, 4, noise, 2), bs_milstein_ladder(spec, 4, noise)[:, 2:])


def test_bs_level_mismatch():
    with pytest.raises(ValueError, match="level"):
        bs_milstein_ladder(BlackScholes(), 3, np.zeros((2, 4)))


def test_bs_strong_convergence_order_one():
    lad = simulate_ladder(BlackScholes(), 5, 100_000, rng(11))
    gaps = [np.mean((lad[:, n] - lad[:, n - 1]) ** 2) for n in range(1, 6)]
    for n in (2, 3, 4):
        assert 3.0 < gaps[n - 1] / gaps[n] < 5.0


# --- Heston ladder -------------------------------------------------------


def test_heston_one_step():
    spec = Heston()
    x, v = heston_step(spec, 0.0, 0.04, 1.0, 0.0, 0.0)
    assert v == pytest.approx(0.0321875, rel=1e-14)
    assert x == pytest.approx(0.05 - 0.02)


def test_heston_one_step_with_noise():
    spec = Heston()
    x, v = heston_step(spec, 0.0, 0.04, 0.25, 0.1, -0.2)
    assert x == pytest.approx((0.05 - 0.02) * 0.25 + 0.2 * 0.1 + 0.0625 * 0.1 * -0.2)
    num = 0.04 + 0.04 * 0.25 + 0.25 * 0.2 * -0.2 + 0.015625 * (0.04 - 0.25)
    assert v == pytest.approx(num / 1.25)


def test_heston_zero_vol_of_vol_is_deterministic_variance():
    spec = Heston(sigma=0.0, v0=0.09, theta=0.04)
    _, v = heston_step(spec, np.zeros(3), np.full(3, 0.09), 0.5, np.array([0.1, 0.0, -0.3]), np.array([1.0, 2.0, -1.0]))
    np.testing.assert_allclose(v, (0.09 + 0.02) / 1.5)


def test_heston_coupling_is_bit_exact():
    spec = Heston()
    noise = draw_noise(spec, 6, 40, rng(5))
    lad = heston_milstein_ladder(spec, 6, noise)
    coarse = noise
    for k in range(6, -1, -1):
        np.testing.assert_array_equal(lad[:, k], heston_milstein_ladder(spec, k, coarse, k)[:, 0])
        if k:
            coarse = coarse.coarsen()


def test_heston_variance_stays_nonnegative():
    spec = Heston(k=2.0, theta=0.02, sigma=0.28)
    noise = draw_noise(spec, 6, 2000, rng(9))
    v = np.full(2000, spec.v0)
    h = 1 / 64
    for j in range(64):
        _, v = heston_step(spec, 0.0, v, h, noise.increments[0][:, j], noise.increments[1][:, j])
        assert (v >= 0).all()


# --- Heston-Hull-White ---------------------------------------------------


def test_cir_degrees_of_freedom():
    assert cir_degrees_of_freedom(HestonHullWhite()) == pytest.approx(7.68)


def test_ou_deterministic_step():
    spec = HestonHullWhite(gamma=0.0)
    assert ou_step(spec, np.array(0.05), 1.0, rng()) == pytest.approx(0.05632120558828558, rel=1e-14)


def test_cir_step_moments():
    spec = HestonHullWhite()
    v = cir_step(spec, np.full(200_000, 0.09), 0.5, rng(2))
    e = math.exp(-1.5)
    mean = 0.04 + 0.05 * e
    var = 0.09 * spec.sigma ** 2 * e * (1 - e) / 3 + 0.04 * spec.sigma ** 2 * (1 - e) ** 2 / 6
    assert v.mean() == pytest.approx(mean, abs=4 * math.sqrt(var / 2e5))
    assert v.var() == pytest.approx(var, rel=0.03)
    assert (v >= 0).all()


def test_hhw_degenerate_reduces_to_black_scholes():
    spec = HestonHullWhite(sigma=0.0, v0=0.04, theta=0.04, gamma=0.0, beta_hw=0.05, r0=0.05)
    lad = simulate_ladder(spec, 4, 400_000, rng(4))
    ref = bs_closed_form_price(BlackScholes(r=0.05, sigma=0.2))
    for k in (0, 4):
        col = lad[:, k]
        assert abs(col.mean() - ref) < 4 * col.std() / math.sqrt(col.size)
    # the ladder is identical across levels when V and r are constant
    np.testing.assert_allclose(lad[:, 0], lad[:, 4], rtol=1e-12)


def test_hhw_paths_nonnegative_variance():
    p = hhw_paths(HestonHullWhite(), 5, 500, rng(6))
    assert p.steps == 32
    assert (p.V >= 0).all()
    assert (p.V[:, 0] == 0.04).all() and (p.r[:, 0] == 0.05).all()


def test_hhw_subsample_coupling():
    spec = HestonHullWhite(rho=-0.3)
    paths = hhw_paths(spec, 5, 30, rng(8))
    lad = hhw_ladder_from_paths(spec, 5, paths)
    for k in range(6):
        sub = subsample_paths(paths, k)
        np.testing.assert_array_equal(sub.normal, paths.normal)
        np.testing.assert_array_equal(lad[:, k], hhw_ladder_from_paths(spec, k, sub, k)[:, 0])


def test_hhw_rho_needs_vol_of_vol():
    with pytest.raises(ValueError):
        HestonHullWhite(rho=-0.5, sigma=0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ladders_are_finite_and_nonnegative(seed):
    for spec in (BlackScholes(), Heston(), HestonHullWhite()):
        lad = simulate_ladder(spec, 3, 16, rng(seed))
        assert lad.shape == (16, 4)
        assert np.isfinite(lad).all() and (lad >= 0).all()


def test_noise_grid_steps():
    g = NoiseGrid((np.zeros((2, 8)),))
    assert g.steps == 8 and g.coarsen().steps == 4
