import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpbrem.accountant import sensitivity
from dpbrem.baselines import LfhRule
from dpbrem.core import RngStream, clip, l2_norm
from dpbrem.data import Dataset, gen_synthetic, partition_uniform, poisson_sample
from dpbrem.learner import ModelSpec, accuracy, init_model, mean_loss_grad, per_record_grads
from dpbrem.protocol import (
    ClientState,
    DpBremRule,
    ServerState,
    centered_clip_sum,
    client_local_update,
    clipped_local_gradient,
    init_server,
    linear_schedule,
    model_update,
    momentum_step,
    run_round,
    sample_clients,
    schedule,
    server_aggregate,
)

SPEC = ModelSpec("logistic_regression", 5, 3)
HUGE = 1e300


def server(d, T=5, R=1.0, C=1.0, eta=0.1, sigma=0.0, q=1.0, momentum=None):
    s = init_server(np.zeros(d), T, (R, R), (C, C), (eta, eta), sigma, q)
    if momentum is not None:
        from dataclasses import replace

        s = replace(s, noisy_momentum=np.asarray(momentum, dtype=float))
    return s


def clients_from(data, n, p, beta, seed=0):
    parts = partition_uniform(data, n, RngStream.from_seed(seed).derive("part"))
    return [ClientState(i, part, p, beta) for i, part in enumerate(parts)]


def closed_form_momentum(grads, beta):
    # independent unrolling: beta^(t-1) g_1 + (1 - beta) sum_{k=2..t} beta^(t-k) g_k
    t = len(grads)
    total = beta ** (t - 1) * np.asarray(grads[0], dtype=float)
    for k in range(2, t + 1):
        total = total + (1 - beta) * beta ** (t - k) * np.asarray(grads[k - 1], dtype=float)
    return total


# --- schedules, sampling, model step ------------------------------------------


def test_linear_schedule_endpoints_and_midpoint():
    assert linear_schedule(10, 3, 1, 300) == 10
    assert linear_schedule(10, 3, 300, 300) == pytest.approx(3.0, abs=1e-12)
    assert linear_schedule(0.1, 0.01, 51, 101) == pytest.approx(0.055, rel=1e-12)
    assert linear_schedule(4, 9, 1, 1) == 4


def test_linear_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        linear_schedule(1, 2, 0, 5)
    with pytest.raises(ValueError):
        linear_schedule(1, 2, 6, 5)


def test_r_schedule_ends_at_thirty_percent():
    R0 = 10.0
    assert schedule(R0, 0.3 * R0, 500)[-1] == pytest.approx(3.0, abs=1e-12)


def test_sample_all_clients_at_rate_one():
    assert sample_clients(7, 1.0, RngStream.from_seed(0)) == tuple(range(7))


def test_sample_clients_concentration():
    root = RngStream.from_seed(4).derive("sampling")
    sizes = [len(sample_clients(100, 0.5, root.derive(k))) for k in range(10_000)]
    assert abs(np.mean(sizes) - 50) <= 1.5


def test_sample_clients_deterministic_and_rejects_bad_rate():
    s = RngStream.from_seed(8)
    assert sample_clients(50, 0.3, s) == sample_clients(50, 0.3, s)
    with pytest.raises(ValueError):
        sample_clients(5, 0.0, s)


def test_model_update_examples():
    theta = np.array([1.0, -2.0])
    np.testing.assert_array_equal(model_update(theta, np.zeros(2), 0.5), theta)
    np.testing.assert_array_equal(model_update(theta, theta, 1.0), np.zeros(2))
    m = np.array([0.3, 0.1])
    twice = model_update(model_update(theta, m, 0.2), m, 0.3)
    np.testing.assert_allclose(twice, theta - 0.5 * m, rtol=1e-15)
    with pytest.raises(ValueError):
        model_update(theta, m, 0.0)


# --- momentum -----------------------------------------------------------------


def test_momentum_beta_zero_tracks_gradient():
    m = None
    for g in (np.array([1.0]), np.array([5.0]), np.array([-2.0])):
        m = momentum_step(m, g, 0.0)
        np.testing.assert_array_equal(m, g)


def test_momentum_second_round_by_hand():
    g1, g2 = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    m = momentum_step(momentum_step(None, g1, 0.9), g2, 0.9)
    np.testing.assert_allclose(m, 0.1 * g2 + 0.9 * g1, rtol=1e-15)


@given(st.integers(1, 60), st.integers(1, 8), st.floats(0, 0.99), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_momentum_matches_closed_form(t, d, beta, seed):
    grads = RngStream.from_seed(seed).generator().normal(size=(t, d))
    m = None
    for g in grads:
        m = momentum_step(m, g, beta)
    np.testing.assert_allclose(m, closed_form_momentum(grads, beta), rtol=0, atol=1e-12)


# --- client update ------------------------------------------------------------


def test_client_update_matches_hand_computation():
    data = gen_synthetic(RngStream.from_seed(1), 40, 5, 3, 2.0)
    c = ClientState(0, data, 0.3, beta=0.9)
    theta = init_model(SPEC, RngStream.from_seed(2))
    streams = [RngStream.from_seed(3).derive(k) for k in range(3)]
    expected = []
    for s in streams:
        batch = poisson_sample(data, 0.3, s.derive("batch"))
        rows = per_record_grads(theta, batch.features, batch.labels, SPEC)
        clipped = np.array([clip(r, 0.5) for r in rows]).reshape(-1, SPEC.n_params)
        expected.append(clipped.sum(axis=0) / (0.3 * 40))
    for s in streams:
        m = client_local_update(c, theta, 0.5, SPEC, s)
    np.testing.assert_allclose(m, closed_form_momentum(expected, 0.9), rtol=1e-12, atol=1e-15)


def test_empty_batch_gives_zero_gradient_and_still_decays_momentum():
    data = Dataset(np.ones((1, 5)), np.array([0]), 3)
    c = ClientState(0, data, 1e-9, beta=0.5)
    c.momentum = np.full(SPEC.n_params, 2.0)
    m = client_local_update(c, np.zeros(SPEC.n_params), 1.0, SPEC, RngStream.from_seed(0))
    np.testing.assert_array_equal(m, np.full(SPEC.n_params, 1.0))


def test_clipped_local_gradient_counts_and_scales():
    grads = np.array([[3.0, 4.0], [0.3, 0.4]])
    g, n_clipped = clipped_local_gradient(grads, 1.0, 0.5, 4)
    assert n_clipped == 1
    np.testing.assert_allclose(g, np.array([0.9, 1.2]) / 2.0)


@given(
    arrays(np.float64, (6, 3), elements=st.floats(-50, 50)),
    st.integers(0, 5),
    st.floats(0.05, 5),
    st.floats(0.05, 5),
    arrays(np.float64, 3, elements=st.floats(-5, 5)),
    arrays(np.float64, 3, elements=st.floats(-5, 5)),
    st.floats(0, 0.95),
)
@settings(max_examples=200, deadline=None)
def test_one_record_moves_clipped_deviation_by_at_most_sensitivity(grads, k, R, C, prev, center, beta):
    p, n = 0.5, 6
    other = grads.copy()
    other[k] = 0.0
    a = momentum_step(prev, clipped_local_gradient(grads, R, p, n)[0], beta)
    b = momentum_step(prev, clipped_local_gradient(other, R, p, n)[0], beta)
    change = l2_norm(clip(a - center, C) - clip(b - center, C))
    assert change <= sensitivity(R, C, p, n) + 1e-9


# --- server aggregation -------------------------------------------------------


def test_single_client_inside_ball_copies_momentum():
    s = server(3, C=10.0, momentum=[1.0, 1.0, 1.0])
    target = np.array([2.0, 0.0, 1.5])
    new, out = server_aggregate(s, {4: target}, 10.0, RngStream.from_seed(0))
    np.testing.assert_allclose(new.noisy_momentum, target, rtol=1e-15)
    assert out.sampled == (4,) and out.updated


def test_saturated_colinear_deviations_move_by_client_bound():
    u = np.array([0.6, 0.8])
    s = server(2, C=0.5, momentum=[1.0, -1.0])
    subs = {i: s.noisy_momentum + (100 + 10 * i) * u for i in range(5)}
    new, _ = server_aggregate(s, subs, 0.5, RngStream.from_seed(0))
    np.testing.assert_allclose(new.noisy_momentum, s.noisy_momentum + 0.5 * u, rtol=1e-14)


def test_model_step_uses_scheduled_rate():
    s = server(2, eta=0.25, C=10.0)
    new, _ = server_aggregate(s, {0: np.array([1.0, 2.0])}, 10.0, RngStream.from_seed(0))
    np.testing.assert_allclose(new.theta, [-0.25, -0.5])
    assert new.round == 1


def test_noise_variance_matches_r_sigma_over_count():
    R, sigma, k, d = 2.0, 0.7, 4, 25
    s = server(d, R=R, sigma=sigma)
    subs = {i: np.zeros(d) for i in range(k)}
    root = RngStream.from_seed(5).derive("noise-mc")
    deltas = np.array([server_aggregate(s, subs, 1.0, root.derive(j))[0].noisy_momentum for j in range(10_000 // d * d)])
    var = deltas.var()
    assert abs(var / (R * sigma / k) ** 2 - 1) <= 0.05


def test_empty_round_skips_update():
    s = server(3, momentum=[0.5, 0.5, 0.5])
    new, out = server_aggregate(s, {}, 1.0, RngStream.from_seed(0))
    np.testing.assert_array_equal(new.noisy_momentum, s.noisy_momentum)
    np.testing.assert_array_equal(new.theta, s.theta)
    assert new.round == 1 and not out.updated


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        server_aggregate(server(3), {0: np.zeros(2)}, 1.0, RngStream.from_seed(0))


@given(
    arrays(np.float64, (4, 3), elements=st.floats(-100, 100)),
    arrays(np.float64, 3, elements=st.floats(-1e4, 1e4)),
    arrays(np.float64, 3, elements=st.floats(-10, 10)),
    st.floats(0.01, 10),
    st.integers(0, 3),
)
def test_single_submission_influence_bounded(rows, replacement, center, C, k):
    subs = {i: rows[i] for i in range(4)}
    swapped = dict(subs)
    swapped[k] = replacement
    a = centered_clip_sum(subs, center, C)[0] / 4
    b = centered_clip_sum(swapped, center, C)[0] / 4
    assert l2_norm(a - b) <= 2 * C / 4 + 1e-9


def test_server_state_validation():
    with pytest.raises(ValueError):
        ServerState(np.zeros(2), np.zeros(2), np.ones(3), np.ones(2), np.ones(2), 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        ServerState(np.zeros(2), np.zeros(3), np.ones(2), np.ones(2), np.ones(2), 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        init_server(np.zeros(2), 2, (1, 1), (1, 1), (1, 1), -1.0, 1.0)
    with pytest.raises(ValueError):
        ClientState(0, Dataset(np.zeros((1, 2)), np.array([0]), 2), 0.5, beta=1.0)


# --- full rounds --------------------------------------------------------------


def test_mechanisms_off_is_plain_distributed_sgd():
    data = gen_synthetic(RngStream.from_seed(6), 60, 5, 3, 2.0)
    cl = clients_from(data, 3, 1.0, 0.0)
    theta0 = init_model(SPEC, RngStream.from_seed(7))
    s = init_server(theta0, 1, (HUGE, HUGE), (HUGE, HUGE), (0.3, 0.3), 0.0, 1.0)
    new, _ = run_round(s, cl, None, RngStream.from_seed(8), spec=SPEC)
    mean_grad = np.mean([mean_loss_grad(theta0, c.data, SPEC) for c in cl], axis=0)
    np.testing.assert_allclose(new.theta, theta0 - 0.3 * mean_grad, rtol=1e-12, atol=1e-15)


def test_reduces_to_lfh_without_noise_sampling_or_record_clipping():
    data = gen_synthetic(RngStream.from_seed(9), 90, 5, 3, 2.0)
    brem_clients = clients_from(data, 3, 1.0, 0.9)
    lfh_clients = clients_from(data, 3, 1.0, 0.9)
    theta0 = init_model(SPEC, RngStream.from_seed(1))
    a = init_server(theta0, 6, (HUGE, HUGE), (0.05, 0.05), (0.5, 0.5), 0.0, 1.0)
    b = a
    rs = RngStream.from_seed(2)
    for _ in range(6):
        a, _ = run_round(a, brem_clients, None, rs, rule=DpBremRule(), spec=SPEC)
        b, _ = run_round(b, lfh_clients, None, rs, rule=LfhRule(), spec=SPEC)
    np.testing.assert_allclose(a.theta, b.theta, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.noisy_momentum, b.noisy_momentum, rtol=0, atol=1e-12)


def test_unsampled_clients_still_advance_momentum():
    data = gen_synthetic(RngStream.from_seed(3), 200, 5, 3, 2.0)
    cl = clients_from(data, 20, 0.5, 0.9)
    s = init_server(np.zeros(SPEC.n_params), 3, (1, 1), (1, 1), (0.1, 0.1), 0.0, 0.2)
    rs = RngStream.from_seed(4)
    history = []
    for _ in range(3):
        before = [None if c.momentum is None else c.momentum.copy() for c in cl]
        s, out = run_round(s, cl, None, rs, spec=SPEC)
        history.append(out.sampled)
        unsampled = [c for c in cl if c.id not in out.sampled]
        assert unsampled
        for c in unsampled:
            assert c.momentum is not None
            if before[c.id] is not None:
                assert not np.array_equal(c.momentum, before[c.id])
    assert len(set(history)) > 1


def _train(seed, T=40):
    data = gen_synthetic(RngStream.from_seed(seed), 600, 5, 3, 5.0)
    cl = clients_from(data, 6, 0.2, 0.9, seed)
    s = init_server(init_model(SPEC, RngStream.from_seed(seed)), T, (5, 5), (1, 1), (0.5, 0.05), 0.0, 1.0)
    rs = RngStream.from_seed(seed).derive("rounds")
    outs = []
    for _ in range(T):
        s, out = run_round(s, cl, None, rs, spec=SPEC)
        outs.append(out)
    return s, outs, data


def test_converges_on_separable_task():
    s, _, data = _train(11)
    assert accuracy(s.theta, data, SPEC) >= 0.95


def test_rounds_are_bit_reproducible():
    s1, o1, _ = _train(12, T=8)
    s2, o2, _ = _train(12, T=8)
    assert s1.theta.tobytes() == s2.theta.tobytes()
    for a, b in zip(o1, o2):
        assert a.sampled == b.sampled
        assert a.noisy_momentum.tobytes() == b.noisy_momentum.tobytes()
        assert a.aggregate_pre_noise.tobytes() == b.aggregate_pre_noise.tobytes()


def test_run_round_rejects_extra_rounds_and_missing_spec():
    s = init_server(np.zeros(SPEC.n_params), 1, (1, 1), (1, 1), (0.1, 0.1), 0.0, 1.0)
    with pytest.raises(ValueError):
        run_round(s, [], None, RngStream.from_seed(0))
    s, _ = run_round(s, [], None, RngStream.from_seed(0), spec=SPEC)
    with pytest.raises(ValueError):
        run_round(s, [], None, RngStream.from_seed(0), spec=SPEC)


def test_noise_is_drawn_with_scheduled_r():
    s = init_server(np.zeros(4), 2, (2.0, 8.0), (1, 1), (0.1, 0.1), 0.5, 1.0)
    subs = {0: np.zeros(4)}
    stream = RngStream.from_seed(0).derive("agg")
    _, first = server_aggregate(s, subs, 1.0, stream)
    s2 = s.__class__(**{**s.__dict__, "round": 1})
    _, second = server_aggregate(s2, subs, 1.0, stream)
    np.testing.assert_allclose(second.noise, 4.0 * first.noise, rtol=1e-14)
