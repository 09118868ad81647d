import itertools
import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpbrem.accountant import (
    PrivacyConfig,
    calibrate_sigma,
    client_reports,
    compose_gdp,
    effective_sigma,
    epsilon_for,
    gdp_mu,
    gdp_mu_rounds,
    gdp_to_delta,
    report,
    sensitivity,
    solve_epsilon,
    std_normal_cdf,
    std_normal_quantile,
)

mp.mp.dps = 40


def oracle_cdf(x) -> mp.mpf:
    return mp.ncdf(mp.mpf(x))


def oracle_delta(mu, eps) -> mp.mpf:
    mu, eps = mp.mpf(mu), mp.mpf(eps)
    return oracle_cdf(-eps / mu + mu / 2) - mp.e**eps * oracle_cdf(-eps / mu - mu / 2)


def oracle_epsilon(mu, delta) -> mp.mpf:
    lo, hi = mp.mpf(0), mp.mpf(64)
    for _ in range(150):
        mid = (lo + hi) / 2
        if oracle_delta(mu, mid) > delta:
            lo = mid
        else:
            hi = mid
    return lo


# frozen from the 40-digit oracle above: T=1000, q=1, p=0.05, n=600, R=C=1, delta=1e-6
REFERENCE = {
    0.15: (0.24999357027223969, 1.0606724310479717),
    0.06: (0.6458819088114612, 2.9905144594665949),
    0.029: (1.5296508901066877, 7.9883562288893963),
}


# --- sensitivity and effective sigma -----------------------------------------


def test_sensitivity_hand_value():
    assert sensitivity(10, 1, 0.05, 600) == pytest.approx(1 / 3, rel=1e-15)


def test_sensitivity_large_client_bound_uses_record_branch():
    assert sensitivity(10, 1e12, 0.05, 600) == 10 / 30


@pytest.mark.parametrize("args", [(0, 1, 0.1, 5), (1, 0, 0.1, 5), (1, 1, 0, 5), (1, 1, 0.1, 0), (-1, 1, 0.1, 5)])
def test_sensitivity_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        sensitivity(*args)


def test_effective_sigma_hand_value():
    assert effective_sigma(0.06, 10, 1, 0.05, 600) == pytest.approx(1.8, rel=1e-14)
    assert effective_sigma(0.0, 10, 1, 0.05, 600) == 0.0


def test_effective_sigma_rejects_bad_bounds():
    with pytest.raises(ValueError):
        effective_sigma(0.1, 0, 1, 0.05, 600)
    with pytest.raises(ValueError):
        effective_sigma(0.1, 1, -1, 0.05, 600)
    with pytest.raises(ValueError):
        effective_sigma(-0.1, 1, 1, 0.05, 600)


@given(
    st.floats(0.01, 10),
    st.floats(1e-3, 100),
    st.floats(1e-3, 100),
    st.floats(1e-3, 1),
    st.integers(1, 100_000),
)
def test_noise_over_sensitivity_identity(sigma, R, C, p, n):
    # whichever branch is active, sigma_i * S_i is the injected noise scale R * sigma
    product = effective_sigma(sigma, R, C, p, n) * sensitivity(R, C, p, n)
    assert product == pytest.approx(R * sigma, rel=1e-12)


# --- mu ----------------------------------------------------------------------


def test_gdp_mu_hand_value():
    exact = mp.mpf("0.05") * mp.sqrt(1000 * mp.expm1(1 / (2 * mp.mpf("1.8") ** 2)))
    assert gdp_mu(1000, 1.0, 0.05, 1.8) == pytest.approx(float(exact), rel=1e-13)
    assert gdp_mu(1000, 1.0, 0.05, 1.8) == pytest.approx(0.6459, abs=5e-5)


def test_gdp_mu_edges():
    assert gdp_mu(0, 1.0, 0.05, 1.8) == 0.0
    assert gdp_mu(10, 1.0, 0.05, 0.0) == math.inf
    assert gdp_mu(10, 1.0, 0.05, 1e-3) == math.inf
    assert gdp_mu(10, 1.0, 0.05, 1e8) < 1e-8
    with pytest.raises(ValueError):
        gdp_mu(10, 1.0, 0.05, -1.0)


def test_gdp_mu_rounds_reduces_to_constant_case():
    assert gdp_mu_rounds(0.7, 0.05, [1.8] * 1000) == pytest.approx(gdp_mu(1000, 0.7, 0.05, 1.8), rel=1e-13)
    assert gdp_mu_rounds(1.0, 0.05, []) == 0.0
    assert gdp_mu_rounds(1.0, 0.05, [1.0, 0.0]) == math.inf


def test_gdp_mu_rounds_is_composition_of_single_rounds():
    sig = [0.9, 1.3, 2.2, 5.0]
    per_round = [gdp_mu(1, 0.5, 0.1, s) for s in sig]
    assert gdp_mu_rounds(0.5, 0.1, sig) == pytest.approx(compose_gdp(per_round), rel=1e-13)


# --- normal CDF ---------------------------------------------------------------


def test_cdf_center_and_tail_value():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(-4.3217) == pytest.approx(7.74e-6, abs=1e-8)
    assert std_normal_cdf(-4.3217) == pytest.approx(float(oracle_cdf("-4.3217")), rel=1e-13)


def test_cdf_against_high_precision_oracle():
    worst = 0.0
    for k in range(-800, 801):
        x = k / 100
        worst = max(worst, abs(std_normal_cdf(x) - float(oracle_cdf(x))))
    assert worst <= 1e-12


def test_cdf_symmetry():
    for k in range(-800, 801, 7):
        x = k / 100
        assert abs(std_normal_cdf(-x) - (1 - std_normal_cdf(x))) <= 1e-14


def test_cdf_lower_tail_relative_accuracy():
    # the delta formula subtracts tiny tails; relative precision matters there
    for x in (-10.0, -20.0, -30.0):
        assert std_normal_cdf(x) == pytest.approx(float(oracle_cdf(x)), rel=1e-12)


def test_quantile_inverts_cdf():
    for prob in (1e-9, 0.01, 0.5, 0.975):
        assert std_normal_cdf(std_normal_quantile(prob)) == pytest.approx(prob, rel=1e-10)
    with pytest.raises(ValueError):
        std_normal_quantile(1.0)


# --- delta and epsilon --------------------------------------------------------


def test_delta_at_zero_epsilon():
    for mu in (0.1, 0.6459, 2.0):
        assert gdp_to_delta(mu, 0.0) == pytest.approx(2 * std_normal_cdf(mu / 2) - 1, rel=1e-12)


def test_delta_matches_oracle():
    for mu, eps in itertools.product((0.25, 0.6459, 1.53, 3.0), (0.0, 0.5, 1.0, 3.0, 8.0)):
        assert gdp_to_delta(mu, eps) == pytest.approx(float(oracle_delta(mu, eps)), rel=1e-9, abs=1e-300)


def test_delta_reference_triple():
    delta = gdp_to_delta(0.6459, 3.0)
    assert abs(delta - 1e-6) <= 0.2e-6


def test_delta_decreasing_in_epsilon():
    for mu in (0.1, 0.5, 1.0, 2.5):
        grid = [gdp_to_delta(mu, k / 10) for k in range(0, 120)]
        nonzero = [d for d in grid if d > 0]
        assert all(a > b for a, b in zip(nonzero, nonzero[1:]))


def test_delta_degenerate_mu():
    assert gdp_to_delta(0.0, 1.0) == 0.0
    assert gdp_to_delta(math.inf, 1.0) == 1.0


@pytest.mark.parametrize("sigma", sorted(REFERENCE))
def test_epsilon_against_frozen_oracle(sigma):
    mu_ref, eps_ref = REFERENCE[sigma]
    sigma_i = effective_sigma(sigma, 1.0, 1.0, 0.05, 600)
    mu = gdp_mu(1000, 1.0, 0.05, sigma_i)
    assert mu == pytest.approx(mu_ref, rel=1e-12)
    eps = solve_epsilon(mu, 1e-6)
    assert abs(gdp_to_delta(mu, eps) - 1e-6) <= 1e-3 * 1e-6 + 1e-18
    assert eps == pytest.approx(eps_ref, abs=1e-3)


def test_frozen_oracle_is_reproducible():
    mu = 0.05 * mp.sqrt(1000 * mp.expm1(1 / (2 * (mp.mpf("0.06") * 30) ** 2)))
    assert float(oracle_epsilon(mu, mp.mpf("1e-6"))) == pytest.approx(REFERENCE[0.06][1], rel=1e-15)


@pytest.mark.parametrize("sigma,target", [(0.06, 3.0), (0.029, 8.0)])
def test_reference_noise_multipliers(sigma, target):
    eps = epsilon_for(1000, 1.0, 0.05, effective_sigma(sigma, 1.0, 1.0, 0.05, 600), 1e-6)
    assert abs(eps - target) / target <= 0.05


def test_solve_epsilon_edges():
    assert solve_epsilon(0.0, 1e-6) == 0.0
    assert solve_epsilon(math.inf, 1e-6) == math.inf
    # target above delta(0): no positive epsilon needed
    assert solve_epsilon(1e-4, 0.5) == 0.0
    with pytest.raises(ValueError):
        solve_epsilon(1.0, 1.0)


def test_solve_epsilon_beyond_initial_bracket():
    eps = solve_epsilon(12.0, 1e-6)
    assert eps > 64
    assert abs(gdp_to_delta(12.0, eps) - 1e-6) <= 1e-9


@given(st.floats(0.05, 6.0), st.sampled_from([1e-9, 1e-6, 1e-5, 1e-3]))
@settings(max_examples=60, deadline=None)
def test_solve_epsilon_round_trip(mu, delta):
    eps = solve_epsilon(mu, delta)
    if eps == 0.0:
        assert gdp_to_delta(mu, 0.0) <= delta
        return
    assert abs(gdp_to_delta(mu, eps) - delta) <= 1e-3 * delta or gdp_to_delta(mu, eps + 2e-9) <= delta


# --- composition --------------------------------------------------------------


def test_compose_examples():
    assert compose_gdp([0.7]) == 0.7
    assert compose_gdp([3.0, 4.0]) == 5.0
    assert compose_gdp([0.3] * 16) == pytest.approx(1.2, rel=1e-15)
    assert compose_gdp([]) == 0.0


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.randoms())
def test_compose_permutation_invariant(mus, rnd):
    shuffled = list(mus)
    rnd.shuffle(shuffled)
    assert compose_gdp(shuffled) == pytest.approx(compose_gdp(mus), rel=1e-14)


@given(st.lists(st.floats(0, 100), max_size=10), st.lists(st.floats(0, 100), max_size=10))
def test_compose_associative(a, b):
    assert compose_gdp([compose_gdp(a), compose_gdp(b)]) == pytest.approx(compose_gdp(a + b), rel=1e-13, abs=1e-300)


# --- monotonicity grid --------------------------------------------------------


def _eps(T, q, p, sigma):
    return epsilon_for(T, q, p, effective_sigma(sigma, 10.0, 1.0, p, 600), 1e-6)


def test_epsilon_monotone_over_grid():
    sigmas = (0.03, 0.05, 0.08, 0.12, 0.2)
    Ts = (10, 100, 500, 1000)
    qs = (0.2, 0.5, 1.0)
    ps = (0.02, 0.05, 0.1)
    configs = 0
    for T, q, p in itertools.product(Ts, qs, ps):
        eps = [_eps(T, q, p, s) for s in sigmas]
        assert all(a >= b for a, b in zip(eps, eps[1:]))
        configs += len(sigmas)
    for q, p, s in itertools.product(qs, ps, sigmas):
        eps = [_eps(T, q, p, s) for T in Ts]
        assert all(a <= b for a, b in zip(eps, eps[1:]))
    for T, p, s in itertools.product(Ts, ps, sigmas):
        eps = [_eps(T, q, p, s) for q in qs]
        assert all(a <= b for a, b in zip(eps, eps[1:]))
    for T, q, s in itertools.product(Ts, qs, sigmas):
        # hold p * n fixed through the effective multiplier so only the sampling rate moves
        eps = [epsilon_for(T, q, p, s * 30, 1e-6) for p in ps]
        assert all(a <= b for a, b in zip(eps, eps[1:]))
    assert configs >= 100


# --- reports and calibration --------------------------------------------------


def test_report_fields():
    r = report(PrivacyConfig(1000, 1.0, 0.05, 600, 10.0, 1.0, 0.06, 1e-6))
    assert r.S == pytest.approx(1 / 3)
    assert r.sigma_i == pytest.approx(1.8)
    assert r.mu == pytest.approx(REFERENCE[0.06][0], rel=1e-12)
    assert r.epsilon == pytest.approx(REFERENCE[0.06][1], abs=1e-3)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=-1),
        dict(q=0.0),
        dict(p=1.5),
        dict(n=0),
        dict(R=0.0),
        dict(sigma=-0.1),
        dict(delta=1.0),
    ],
)
def test_privacy_config_rejects(kwargs):
    base = dict(T=10, q=1.0, p=0.1, n=100, R=1.0, C=1.0, sigma=1.0, delta=1e-6)
    base.update(kwargs)
    with pytest.raises(ValueError):
        PrivacyConfig(**base)


def test_client_reports_one_per_distinct_pair():
    reps = client_reports(100, 1.0, 10.0, 1.0, 0.1, 1e-6, [(0.05, 600), (0.05, 600), (0.05, 300), (0.1, 600)])
    assert [(r.p, r.n) for r in reps] == [(0.05, 300), (0.05, 600), (0.1, 600)]
    # fewer expected records per batch means a smaller sigma_i and a larger epsilon
    assert reps[0].epsilon > reps[1].epsilon


def test_calibrate_sigma_hits_target():
    f = lambda s: epsilon_for(1000, 1.0, 0.05, effective_sigma(s, 1.0, 1.0, 0.05, 600), 1e-6)
    sigma = calibrate_sigma(3.0, 1e-6, f)
    assert f(sigma) <= 3.0
    assert f(sigma * (1 - 1e-4)) > 3.0 - 1e-2
    assert sigma == pytest.approx(0.06, rel=0.05)


def test_calibrate_sigma_errors():
    with pytest.raises(ValueError):
        calibrate_sigma(0.0, 1e-6, lambda s: 1.0)
    with pytest.raises(ValueError):
        calibrate_sigma(1.0, 1e-6, lambda s: 5.0)
    assert calibrate_sigma(1.0, 1e-6, lambda s: 0.0) == 1e-4
