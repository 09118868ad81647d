"""The DP-BREM round: client momentum, client sampling, centered clipping with
central Gaussian noise, and the model step.

Rules share one interface (:class:`AggregationRule`) so the harness can swap
DP-BREM for any baseline. A rule owns two things: what an honest client
submits, and how the server turns the sampled submissions into the next
model. ``run_round`` wires clients, an optional adversary and a rule together.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

from .core import RngStream, clip, clip_rows, compensated_sum, gaussian_vector, l2_norm
from .data import Dataset, poisson_sample
from .learner import ModelSpec, per_record_grads

if TYPE_CHECKING:
    from .attacks import Adversary


@dataclass
class ClientState:
    id: int
    data: Dataset
    p: float
    beta: float = 0.9
    momentum: np.ndarray | None = None
    # unclipped momentum, maintained only when aggregation-error tracking is on
    raw_momentum: np.ndarray | None = None
    track_raw: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if not 0 < self.p <= 1:
            raise ValueError("record sampling rate must lie in (0, 1]")


@dataclass(frozen=True)
class ServerState:
    theta: np.ndarray
    noisy_momentum: np.ndarray
    R_schedule: np.ndarray
    C_schedule: np.ndarray
    eta_schedule: np.ndarray
    sigma: float
    q: float
    T: int
    round: int = 0

    def __post_init__(self) -> None:
        for name in ("R_schedule", "C_schedule", "eta_schedule"):
            sched = np.asarray(getattr(self, name), dtype=np.float64)
            if sched.shape != (self.T,):
                raise ValueError(f"{name} must have length T={self.T}")
            if np.any(sched <= 0):
                raise ValueError(f"{name} must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if self.noisy_momentum.shape != self.theta.shape:
            raise ValueError("momentum and parameters differ in length")

    @property
    def d(self) -> int:
        return int(self.theta.size)

    def bounds(self, t: int) -> tuple[float, float, float]:
        """(R, C, eta) scheduled for round ``t`` (1-based)."""
        return float(self.R_schedule[t - 1]), float(self.C_schedule[t - 1]), float(self.eta_schedule[t - 1])


@dataclass
class RoundOutput:
    round: int
    sampled: tuple[int, ...]
    aggregate_pre_noise: np.ndarray
    noise: np.ndarray
    noisy_momentum: np.ndarray
    updated: bool
    diagnostics: dict[str, float] = field(default_factory=dict)


@dataclass
class LocalUpdate:
    submission: np.ndarray
    n_batch: int
    n_clipped: int


def linear_schedule(v_start: float, v_end: float, t: int, T: int) -> float:
    if not 1 <= t <= T:
        raise ValueError(f"round {t} outside 1..{T}")
    if T == 1:
        return v_start
    return v_start + (t - 1) / (T - 1) * (v_end - v_start)


def schedule(v_start: float, v_end: float, T: int) -> np.ndarray:
    return np.array([linear_schedule(v_start, v_end, t, T) for t in range(1, T + 1)])


def sample_clients(n: int, q: float, stream: RngStream) -> tuple[int, ...]:
    """Independent Bernoulli(q) selection of client ids 0..n-1."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if q == 1:
        return tuple(range(n))
    return tuple(int(i) for i in np.flatnonzero(stream.uniform(n) < q))


def model_update(theta: np.ndarray, momentum: np.ndarray, eta: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError("learning rate must be positive")
    return theta - eta * momentum


def momentum_step(previous: np.ndarray | None, grad: np.ndarray, beta: float) -> np.ndarray:
    if previous is None:
        return grad.copy()
    return (1.0 - beta) * grad + beta * previous


def batch_gradients(c: ClientState, theta: np.ndarray, spec: ModelSpec, stream: RngStream) -> np.ndarray:
    """Per-record gradients of a fresh Poisson batch, one row per sampled record."""
    batch = poisson_sample(c.data, c.p, stream.derive("batch"))
    return per_record_grads(theta, batch.features, batch.labels, spec)


def clipped_local_gradient(grads: np.ndarray, R: float, p: float, n: int) -> tuple[np.ndarray, int]:
    """(1 / (p n)) times the sum of record-clipped gradients; zero for an empty batch."""
    clipped, n_clipped = clip_rows(grads, R)
    return compensated_sum(clipped, grads.shape[1]) / (p * n), n_clipped


def _advance_raw(c: ClientState, grads: np.ndarray) -> None:
    if c.track_raw:
        raw = compensated_sum(grads, grads.shape[1]) / (c.p * len(c.data))
        c.raw_momentum = momentum_step(c.raw_momentum, raw, c.beta)


def client_local_update(
    c: ClientState, theta_prev: np.ndarray, R: float, spec: ModelSpec, stream: RngStream
) -> np.ndarray:
    """Advance the client's momentum by one round and return it."""
    return DpBremRule().local_update(c, theta_prev, R, spec, stream).submission


def check_submissions(submissions: Mapping[int, np.ndarray], d: int) -> list[int]:
    ids = sorted(submissions)
    for i in ids:
        if np.shape(submissions[i]) != (d,):
            raise ValueError(f"submission of client {i} has shape {np.shape(submissions[i])}, expected ({d},)")
    return ids


def centered_clip_sum(
    submissions: Mapping[int, np.ndarray], center: np.ndarray, C: float
) -> tuple[np.ndarray, list[int], int, float]:
    """Sum of clip(s_i - center, C) in client-id order.

    Returns the sum, the ids, how many deviations were clipped, and the mean
    deviation norm before clipping.
    """
    ids = check_submissions(submissions, center.size)
    deviations = np.array([submissions[i] - center for i in ids]).reshape(len(ids), center.size)
    norms = np.linalg.norm(deviations, axis=1) if ids else np.zeros(0)
    clipped, n_clipped = clip_rows(deviations, C)
    mean_norm = float(norms.mean()) if ids else 0.0
    return compensated_sum(clipped, center.size), ids, n_clipped, mean_norm


# ---------------------------------------------------------------------------
# Rule interface
# ---------------------------------------------------------------------------


class AggregationRule(ABC):
    """Submission and aggregation semantics of one FL protocol."""

    kind: str = ""
    # rules whose local noise makes client sampling useless for amplification
    local_privacy: bool = False

    @abstractmethod
    def local_update(
        self, c: ClientState, theta: np.ndarray, R: float, spec: ModelSpec, stream: RngStream
    ) -> LocalUpdate:
        """Honest client computation for one round; may advance client state."""

    @abstractmethod
    def aggregate(
        self, server: ServerState, submissions: Mapping[int, np.ndarray], stream: RngStream
    ) -> tuple[ServerState, RoundOutput]:
        """Turn the sampled submissions into the next server state."""

    def sigma_factor(self, R: float, C: float, p: float, n: int, d: int) -> float:
        """Ratio sigma_i / sigma used by the accountant; inf means no privacy."""
        return p * n

    def accounting_q(self, q: float) -> float:
        return 1.0 if self.local_privacy else q

    def is_private(self, sigma: float) -> bool:
        return sigma > 0


def _skip(server: ServerState, t: int) -> tuple[ServerState, RoundOutput]:
    zero = np.zeros(server.d)
    out = RoundOutput(t, (), zero, zero.copy(), server.noisy_momentum.copy(), False)
    return replace(server, round=t), out


class DpBremRule(AggregationRule):
    """Client momentum plus centered clipping with central noise R * sigma.

    With ``secure`` set, the noisy sum is produced by the secret-shared
    pipeline instead of in the clear.
    """

    kind = "dp_brem"

    def __init__(self, secure: Any = None) -> None:
        self.secure = secure

    def local_update(self, c, theta, R, spec, stream):
        grads = batch_gradients(c, theta, spec, stream)
        g, n_clipped = clipped_local_gradient(grads, R, c.p, len(c.data))
        c.momentum = momentum_step(c.momentum, g, c.beta)
        _advance_raw(c, grads)
        return LocalUpdate(c.momentum.copy(), grads.shape[0], n_clipped)

    def sigma_factor(self, R, C, p, n, d):
        return max(R / (2.0 * C), p * n)

    def aggregate(self, server, submissions, stream):
        return server_aggregate(server, submissions, server.bounds(server.round + 1)[1], stream, secure=self.secure)


def server_aggregate(
    s: ServerState,
    submissions: Mapping[int, np.ndarray],
    C: float,
    stream: RngStream,
    secure: Any = None,
) -> tuple[ServerState, RoundOutput]:
    """Centered-clipped noisy momentum update followed by the model step."""
    t = s.round + 1
    R, _, eta = s.bounds(t)
    if not submissions:
        check_submissions(submissions, s.d)
        return _skip(s, t)
    m_prev = s.noisy_momentum
    if secure is None:
        total, ids, n_clipped, mean_norm = centered_clip_sum(submissions, m_prev, C)
        noise = gaussian_vector(stream.derive("noise"), s.d, R * s.sigma)
        noisy_total = total + noise
    else:
        ids = check_submissions(submissions, s.d)
        deviations = {i: submissions[i] - m_prev for i in ids}
        norms = [l2_norm(v) for v in deviations.values()]
        n_clipped = sum(n > C for n in norms)
        mean_norm = float(np.mean(norms))
        clipped = {i: clip(v, C) for i, v in deviations.items()}
        noisy_total, noise, valid = secure.noisy_sum(clipped, C, R * s.sigma, stream.derive("secure"))
        if not valid:
            return _skip(s, t)
        ids = list(valid)
        total = compensated_sum([clipped[i] for i in ids], s.d)
    m_t = m_prev + noisy_total / len(ids)
    theta = model_update(s.theta, m_t, eta)
    out = RoundOutput(
        t,
        tuple(ids),
        total,
        noise,
        m_t.copy(),
        True,
        {"clip_fraction_client": n_clipped / len(ids), "mean_deviation_norm": mean_norm},
    )
    return replace(s, theta=theta, noisy_momentum=m_t, round=t), out


# ---------------------------------------------------------------------------
# Round driver
# ---------------------------------------------------------------------------


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    attack: Adversary | None,
    stream: RngStream,
    rule: AggregationRule | None = None,
    spec: ModelSpec | None = None,
) -> tuple[ServerState, RoundOutput]:
    """One synchronous round: every client updates, sampled ones submit."""
    if spec is None:
        raise ValueError("a model spec is required")
    rule = rule or DpBremRule()
    t = server.round + 1
    if t > server.T:
        raise ValueError(f"all {server.T} rounds already ran")
    R, _, _ = server.bounds(t)
    rs = stream.derive(f"round/{t}")
    sampled = sample_clients(len(clients), server.q, rs.derive("sample"))
    byz = set(attack.byzantine) if attack is not None else set()

    updates: dict[int, LocalUpdate] = {}
    for c in clients:
        updates[c.id] = rule.local_update(c, server.theta, R, spec, rs.derive(f"client/{c.id}"))

    submissions = {i: updates[i].submission for i in sampled}
    if attack is not None and byz:
        from .attacks import ByzKnowledge

        corrupted = [c for c in clients if c.id in byz]
        knowledge = ByzKnowledge.from_clients(
            corrupted,
            {c.id: updates[c.id].submission for c in corrupted},
            server.theta,
            server.noisy_momentum,
        )
        crafted = attack.craft(knowledge, len(clients), rule, spec, R, rs)
        for i in sampled:
            if i in byz:
                submissions[i] = crafted[i]

    new_server, out = rule.aggregate(server, submissions, rs.derive("aggregate"))
    honest = [c for c in clients if c.id not in byz]
    n_batch = sum(updates[c.id].n_batch for c in honest)
    n_clip = sum(updates[c.id].n_clipped for c in honest)
    out.diagnostics["clip_fraction_record"] = n_clip / n_batch if n_batch else 0.0
    out.diagnostics.setdefault("clip_fraction_client", 0.0)
    if honest and all(c.raw_momentum is not None for c in honest):
        target = compensated_sum([c.raw_momentum for c in honest]) / len(honest)
        diff = new_server.noisy_momentum - target
        out.diagnostics["agg_error_sq"] = float(np.dot(diff, diff))
    return new_server, out


def init_server(
    theta0: np.ndarray,
    T: int,
    R: tuple[float, float],
    C: tuple[float, float],
    eta: tuple[float, float],
    sigma: float,
    q: float,
) -> ServerState:
    """Server state with linear schedules given as (start, end) pairs."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    return ServerState(
        theta=theta0.copy(),
        noisy_momentum=np.zeros_like(theta0),
        R_schedule=schedule(*R, T),
        C_schedule=schedule(*C, T),
        eta_schedule=schedule(*eta, T),
        sigma=sigma,
        q=q,
        T=T,
    )


__all__ = [
    "AggregationRule",
    "ClientState",
    "DpBremRule",
    "LocalUpdate",
    "RoundOutput",
    "ServerState",
    "batch_gradients",
    "centered_clip_sum",
    "client_local_update",
    "clipped_local_gradient",
    "init_server",
    "linear_schedule",
    "model_update",
    "momentum_step",
    "run_round",
    "sample_clients",
    "schedule",
    "server_aggregate",
]

