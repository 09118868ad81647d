"""Comparison protocols behind the :class:`~dpbrem.protocol.AggregationRule` interface."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Mapping

import numpy as np

from .core import RngStream, clip_rows, compensated_sum, gaussian_vector
from .learner import ModelSpec
from .protocol import (
    AggregationRule,
    ClientState,
    DpBremRule,
    LocalUpdate,
    RoundOutput,
    ServerState,
    _advance_raw,
    _skip,
    batch_gradients,
    centered_clip_sum,
    check_submissions,
    clipped_local_gradient,
    model_update,
    momentum_step,
)

RULES = ("dp_brem", "lfh", "dp_lfh", "dp_fedsgd", "dp_cm", "dp_rsa", "ddp_rp")


def _stack(submissions: Mapping[int, np.ndarray], d: int) -> tuple[list[int], np.ndarray]:
    ids = check_submissions(submissions, d)
    return ids, np.array([submissions[i] for i in ids]).reshape(len(ids), d)


def _momentum_centered_step(server: ServerState, submissions, stream) -> tuple[ServerState, RoundOutput]:
    """Noise-free centered clipping shared by LFH and DP-LFH."""
    t = server.round + 1
    _, C, eta = server.bounds(t)
    if not submissions:
        return _skip(server, t)
    total, ids, n_clipped, mean_norm = centered_clip_sum(submissions, server.noisy_momentum, C)
    m_t = server.noisy_momentum + total / len(ids)
    out = RoundOutput(
        t, tuple(ids), total, np.zeros(server.d), m_t.copy(), True,
        {"clip_fraction_client": n_clipped / len(ids), "mean_deviation_norm": mean_norm},
    )
    return replace(server, theta=model_update(server.theta, m_t, eta), noisy_momentum=m_t, round=t), out


def _mean_or_zero(rows: np.ndarray, d: int) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.zeros(d)
    return compensated_sum(rows, d) / rows.shape[0]


# ---------------------------------------------------------------------------
# LFH and DP-LFH
# ---------------------------------------------------------------------------


class LfhRule(AggregationRule):
    """Batch-mean gradients without clipping or noise; momentum; centered clipping."""

    kind = "lfh"

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g = _mean_or_zero(grads, spec.n_params)
        c.momentum = momentum_step(c.momentum, g, c.beta)
        _advance_raw(c, grads)
        return LocalUpdate(c.momentum.copy(), grads.shape[0], 0)

    def aggregate(self, server, submissions, stream):
        return _momentum_centered_step(server, submissions, stream)

    def sigma_factor(self, R, C, p, n, d):
        return math.inf

    def is_private(self, sigma):
        return False


def dp_lfh_local_gradient(
    grads: np.ndarray, R: float, sigma_local: float, stream: RngStream
) -> tuple[np.ndarray, int]:
    """Record-clipped batch mean plus N(0, (R sigma_local)^2); divisor 1 for an empty batch."""
    d = grads.shape[1]
    clipped, n_clipped = clip_rows(grads, R)
    divisor = max(grads.shape[0], 1)
    noise = gaussian_vector(stream.derive("local_noise"), d, R * sigma_local)
    return compensated_sum(clipped, d) / divisor + noise, n_clipped


class DpLfhRule(AggregationRule):
    """LFH with record clipping and local Gaussian noise at every client."""

    kind = "dp_lfh"
    local_privacy = True

    def __init__(self, sigma_local: float = 0.0) -> None:
        if sigma_local < 0:
            raise ValueError("sigma_local must be nonnegative")
        self.sigma_local = sigma_local

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = dp_lfh_local_gradient(grads, R, self.sigma_local, stream)
        c.momentum = momentum_step(c.momentum, g, c.beta)
        _advance_raw(c, grads)
        return LocalUpdate(c.momentum.copy(), grads.shape[0], n_clipped)

    def aggregate(self, server, submissions, stream):
        return _momentum_centered_step(server, submissions, stream)


def dp_lfh_client_update(
    c: ClientState, theta: np.ndarray, R: float, sigma_local: float, spec: ModelSpec, stream: RngStream
) -> np.ndarray:
    return DpLfhRule(sigma_local).local_update(c, theta, R, spec, stream).submission


def lfh_round(server: ServerState, submissions: Mapping[int, np.ndarray]) -> ServerState:
    """Server half of LFH; the stream is unused because no noise is drawn."""
    return _momentum_centered_step(server, submissions, None)[0]


# ---------------------------------------------------------------------------
# DP-FedSGD
# ---------------------------------------------------------------------------


class DpFedSgdRule(AggregationRule):
    """Record-clipped gradients, client clipping at C around zero, central noise."""

    kind = "dp_fedsgd"

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = clipped_local_gradient(grads, R, c.p, len(c.data))
        return LocalUpdate(g, grads.shape[0], n_clipped)

    def sigma_factor(self, R, C, p, n, d):
        return max(R / (2.0 * C), p * n)

    def aggregate(self, server, submissions, stream):
        t = server.round + 1
        R, C, eta = server.bounds(t)
        if not submissions:
            return _skip(server, t)
        ids, rows = _stack(submissions, server.d)
        clipped, n_clipped = clip_rows(rows, C)
        total = compensated_sum(clipped, server.d)
        noise = gaussian_vector(stream.derive("noise"), server.d, R * server.sigma)
        g = (total + noise) / len(ids)
        out = RoundOutput(t, tuple(ids), total, noise, g.copy(), True, {"clip_fraction_client": n_clipped / len(ids)})
        return replace(server, theta=model_update(server.theta, g, eta), noisy_momentum=g, round=t), out


def dp_fedsgd_round(server: ServerState, submissions: Mapping[int, np.ndarray], stream: RngStream) -> ServerState:
    return DpFedSgdRule().aggregate(server, submissions, stream)[0]


# ---------------------------------------------------------------------------
# DP-CM
# ---------------------------------------------------------------------------


def lower_median(rows: np.ndarray) -> np.ndarray:
    """Coordinate-wise median; for an even count the lower of the two middle values."""
    if rows.shape[0] == 0:
        raise ValueError("median of an empty submission set")
    return np.sort(rows, axis=0)[(rows.shape[0] - 1) // 2]


def dp_cm_aggregate(submissions: Mapping[int, np.ndarray], noise_std: float, stream: RngStream) -> np.ndarray:
    if not submissions:
        raise ValueError("median of an empty submission set")
    d = np.shape(next(iter(submissions.values())))[0]
    _, rows = _stack(submissions, d)
    return lower_median(rows) + gaussian_vector(stream.derive("noise"), d, noise_std)


class DpCmRule(AggregationRule):
    """Coordinate-wise median of record-clipped gradients plus N(0, (R sigma)^2).

    The median moves by up to a full client's change, so its noise is not
    divided by the number of clients the way a mean's would be.
    """

    kind = "dp_cm"

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = clipped_local_gradient(grads, R, c.p, len(c.data))
        return LocalUpdate(g, grads.shape[0], n_clipped)

    def aggregate(self, server, submissions, stream):
        t = server.round + 1
        R, _, eta = server.bounds(t)
        if not submissions:
            return _skip(server, t)
        ids, rows = _stack(submissions, server.d)
        median = lower_median(rows)
        noise = gaussian_vector(stream.derive("noise"), server.d, R * server.sigma)
        g = median + noise
        out = RoundOutput(t, tuple(ids), median, noise, g.copy(), True)
        return replace(server, theta=model_update(server.theta, g, eta), noisy_momentum=g, round=t), out


# ---------------------------------------------------------------------------
# DP-RSA
# ---------------------------------------------------------------------------


class DpRsaRule(AggregationRule):
    """Clients send sign(g) + N(0, sigma_local^2); the server averages.

    Noise is added after the sign. The sign vector can change in every
    coordinate when one record changes, so its L2 sensitivity is 2 sqrt(d).
    """

    kind = "dp_rsa"
    local_privacy = True

    def __init__(self, sigma_local: float = 0.0) -> None:
        if sigma_local < 0:
            raise ValueError("sigma_local must be nonnegative")
        self.sigma_local = sigma_local

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = clipped_local_gradient(grads, R, c.p, len(c.data))
        noise = gaussian_vector(stream.derive("local_noise"), spec.n_params, self.sigma_local)
        return LocalUpdate(np.sign(g) + noise, grads.shape[0], n_clipped)

    def sigma_factor(self, R, C, p, n, d):
        return 1.0 / (2.0 * math.sqrt(d))

    def aggregate(self, server, submissions, stream):
        t = server.round + 1
        _, _, eta = server.bounds(t)
        if not submissions:
            return _skip(server, t)
        ids, rows = _stack(submissions, server.d)
        update = dp_rsa_aggregate(rows)
        out = RoundOutput(t, tuple(ids), update, np.zeros(server.d), update.copy(), True)
        return replace(server, theta=model_update(server.theta, update, eta), noisy_momentum=update, round=t), out


def dp_rsa_aggregate(rows: np.ndarray) -> np.ndarray:
    return compensated_sum(rows, rows.shape[1]) / rows.shape[0]


# ---------------------------------------------------------------------------
# DDP-RP
# ---------------------------------------------------------------------------


def in_range(v: np.ndarray, r: float) -> bool:
    """Plaintext stand-in for an element-wise range proof on [-r, r]."""
    return bool(np.all(np.abs(v) <= r))


class DdpRpRule(AggregationRule):
    """Distributed noise N(0, (R sigma)^2 / tau) per client and a range check.

    ``tau`` is the assumed number of honest clients, so the honest noise alone
    sums to standard deviation R sigma.
    """

    kind = "ddp_rp"

    def __init__(self, sigma: float = 0.0, tau: int = 1, range_bound: float = 10.0) -> None:
        if sigma < 0 or tau < 1 or not range_bound > 0:
            raise ValueError("need sigma >= 0, tau >= 1, range_bound > 0")
        self.sigma = sigma
        self.tau = tau
        self.range_bound = range_bound

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = clipped_local_gradient(grads, R, c.p, len(c.data))
        noise = gaussian_vector(stream.derive("local_noise"), spec.n_params, R * self.sigma / math.sqrt(self.tau))
        return LocalUpdate(g + noise, grads.shape[0], n_clipped)

    def aggregate(self, server, submissions, stream):
        t = server.round + 1
        _, _, eta = server.bounds(t)
        ids = check_submissions(submissions, server.d)
        accepted = [i for i in ids if in_range(submissions[i], self.range_bound)]
        if not accepted:
            new_server, out = _skip(server, t)
            out.sampled = tuple(ids)
            out.diagnostics["rejected_fraction"] = 1.0 if ids else 0.0
            return new_server, out
        total = compensated_sum([submissions[i] for i in accepted], server.d)
        update = total / len(accepted)
        out = RoundOutput(
            t, tuple(ids), total, np.zeros(server.d), update.copy(), True,
            {"rejected_fraction": 1.0 - len(accepted) / len(ids)},
        )
        return replace(server, theta=model_update(server.theta, update, eta), noisy_momentum=update, round=t), out


def ddp_rp_round(server: ServerState, submissions: Mapping[int, np.ndarray], range_bound: float) -> ServerState:
    return DdpRpRule(range_bound=range_bound).aggregate(server, submissions, None)[0]


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def make_rule(
    kind: str,
    sigma: float = 0.0,
    tau: int = 1,
    range_bound: float = 10.0,
    secure=None,
) -> AggregationRule:
    """Build a rule by name. ``sigma`` feeds the local-noise rules directly."""
    if kind == "dp_brem":
        return DpBremRule(secure=secure)
    if secure is not None:
        raise ValueError("secure aggregation is only available for dp_brem")
    if kind == "lfh":
        return LfhRule()
    if kind == "dp_lfh":
        return DpLfhRule(sigma)
    if kind == "dp_fedsgd":
        return DpFedSgdRule()
    if kind == "dp_cm":
        return DpCmRule()
    if kind == "dp_rsa":
        return DpRsaRule(sigma)
    if kind == "ddp_rp":
        return DdpRpRule(sigma, tau, range_bound)
    raise ValueError(f"unknown rule {kind!r}; expected one of {', '.join(RULES)}")
