"""Byzantine submission crafting: ALIE, IPM, label flipping and min-max (MTB).

The adversary sees only what corrupted clients hold: their data, their own
momenta and honest submissions, plus the public model and noisy momentum.
That boundary is :class:`ByzKnowledge`; crafting functions take nothing else.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .accountant import std_normal_quantile
from .core import RngStream, l2_norm
from .data import Dataset

if TYPE_CHECKING:
    from .learner import ModelSpec
    from .protocol import AggregationRule, ClientState

KINDS = ("none", "alie", "ipm", "lf", "mtb")
PERTURBATIONS = ("inverse_unit", "inverse_std", "inverse_sign")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    byz_fraction: float = 0.0
    ipm_scale: float = 1.0
    alie_z_max: float | None = None
    mtb_gamma_max: float = 50.0
    mtb_perturbation: str = "inverse_unit"
    mtb_iterations: int = 20
    lf_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if not 0 <= self.byz_fraction < 0.5:
            raise ValueError("byz_fraction must lie in [0, 0.5)")
        if not self.ipm_scale > 0:
            raise ValueError("ipm_scale must be positive")
        if not self.mtb_gamma_max > 0 or self.mtb_iterations < 1:
            raise ValueError("mtb search needs gamma_max > 0 and at least one iteration")
        if self.mtb_perturbation not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.mtb_perturbation!r}")


@dataclass(frozen=True)
class ByzKnowledge:
    """Snapshot of what the colluding clients know in one round."""

    clients: Mapping[int, ClientState]
    submissions: Mapping[int, np.ndarray]
    theta: np.ndarray
    public_momentum: np.ndarray

    @classmethod
    def from_clients(
        cls,
        corrupted: list[ClientState],
        submissions: Mapping[int, np.ndarray],
        theta: np.ndarray,
        public_momentum: np.ndarray,
    ) -> ByzKnowledge:
        ids = {c.id for c in corrupted}
        if set(submissions) != ids:
            raise ValueError("knowledge submissions must come from exactly the corrupted clients")
        return cls({c.id: c for c in corrupted}, dict(submissions), theta.copy(), public_momentum.copy())

    @property
    def datasets(self) -> dict[int, Dataset]:
        return {i: c.data for i, c in self.clients.items()}

    @property
    def momenta(self) -> dict[int, np.ndarray | None]:
        return {i: c.momentum for i, c in self.clients.items()}

    def matrix(self) -> np.ndarray:
        return np.array([self.submissions[i] for i in sorted(self.submissions)])


def byzantine_count(n: int, fraction: float) -> int:
    """round(fraction * n) with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def choose_byzantine(n: int, fraction: float, stream: RngStream) -> tuple[int, ...]:
    k = byzantine_count(n, fraction)
    if k == 0:
        return ()
    return tuple(sorted(int(i) for i in stream.generator().permutation(n)[:k]))


def estimate_benign(knowledge: ByzKnowledge) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and population std of the corrupted honest submissions."""
    rows = knowledge.matrix()
    if rows.shape[0] == 0:
        raise ValueError("no corrupted clients")
    return rows.mean(axis=0), rows.std(axis=0)


def alie_z_max(n: int, n_byz: int) -> float:
    """Largest shift that still keeps the crafted value inside the majority."""
    honest = n - n_byz
    if honest < 1:
        raise ValueError("need at least one honest client")
    s = math.floor(n / 2 + 1) - n_byz
    if s <= 0 or honest - s <= 0:
        return std_normal_quantile(1.0 - 1.0 / honest) if honest > 1 else 0.0
    return std_normal_quantile((honest - s) / honest)


def alie_craft(knowledge: ByzKnowledge, n: int, n_byz: int, z_max: float | None = None) -> np.ndarray:
    if n_byz < 1:
        raise ValueError("ALIE needs at least one Byzantine client")
    mean, std = estimate_benign(knowledge)
    z = alie_z_max(n, n_byz) if z_max is None else z_max
    return mean + z * std


def ipm_craft(knowledge: ByzKnowledge, scale: float = 1.0) -> np.ndarray:
    if not scale > 0:
        raise ValueError("IPM scale must be positive")
    mean, _ = estimate_benign(knowledge)
    return -scale * mean


def flip_labels(d: Dataset) -> Dataset:
    """Map every label k to L - 1 - k."""
    return d.with_labels(d.n_classes - 1 - d.labels)


def lf_craft(
    benign: Mapping[int, np.ndarray], flipped: Mapping[int, np.ndarray], scale: float = 1.0
) -> dict[int, np.ndarray]:
    """Per corrupted client, scale * (g_bad - g_benign)."""
    if set(benign) != set(flipped):
        raise ValueError("benign and flipped submissions must cover the same clients")
    return {i: scale * (flipped[i] - benign[i]) for i in benign}


def _pairwise_diameter(rows: np.ndarray) -> float:
    diffs = rows[:, None, :] - rows[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).max())


def min_max_feasible(candidate: np.ndarray, rows: np.ndarray, diameter: float | None = None) -> bool:
    """True when the candidate is no farther from any row than the rows' diameter."""
    if diameter is None:
        diameter = _pairwise_diameter(rows)
    return float(np.linalg.norm(rows - candidate, axis=1).max()) <= diameter


def mtb_perturbation(mean: np.ndarray, std: np.ndarray, kind: str) -> np.ndarray:
    if kind == "inverse_unit":
        norm = l2_norm(mean)
        return -mean / norm if norm > 0 else np.zeros_like(mean)
    if kind == "inverse_std":
        return -std
    if kind == "inverse_sign":
        return -np.sign(mean)
    raise ValueError(f"unknown perturbation {kind!r}")


def mtb_gamma(
    reference: np.ndarray, direction: np.ndarray, rows: np.ndarray, gamma_max: float = 50.0, iterations: int = 20
) -> float:
    """Largest feasible step along ``direction`` found by bisection on [0, gamma_max]."""
    diameter = _pairwise_diameter(rows)
    if min_max_feasible(reference + gamma_max * direction, rows, diameter):
        return gamma_max
    lo, hi = 0.0, gamma_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if min_max_feasible(reference + mid * direction, rows, diameter):
            lo = mid
        else:
            hi = mid
    return lo


def mtb_craft(
    knowledge: ByzKnowledge,
    n: int,
    n_byz: int,
    gamma_max: float = 50.0,
    perturbation: str = "inverse_unit",
    iterations: int = 20,
) -> np.ndarray:
    if n_byz < 1:
        raise ValueError("MTB needs at least one Byzantine client")
    rows = knowledge.matrix()
    mean, std = estimate_benign(knowledge)
    direction = mtb_perturbation(mean, std, perturbation)
    return mean + mtb_gamma(mean, direction, rows, gamma_max, iterations) * direction


class Adversary:
    """Fixed Byzantine set plus whatever per-client state an attack carries.

    Label flipping keeps a shadow copy of each corrupted client trained on
    flipped labels, so momentum-based rules see a consistent bad history.
    """

    def __init__(self, config: AttackConfig, byzantine: tuple[int, ...]) -> None:
        self.config = config
        self.byzantine = tuple(sorted(byzantine)) if config.kind != "none" else ()
        self._shadows: dict[int, ClientState] = {}

    def craft(
        self,
        knowledge: ByzKnowledge,
        n: int,
        rule: AggregationRule,
        spec: ModelSpec,
        R: float,
        round_stream: RngStream,
    ) -> dict[int, np.ndarray]:
        cfg = self.config
        k = len(self.byzantine)
        if k == 0:
            return dict(knowledge.submissions)
        if cfg.kind == "lf":
            flipped = {}
            for i, client in sorted(knowledge.clients.items()):
                shadow = self._shadows.get(i)
                if shadow is None:
                    shadow = copy.copy(client)
                    shadow.data = flip_labels(client.data)
                    shadow.momentum = None
                    shadow.raw_momentum = None
                    shadow.track_raw = False
                    self._shadows[i] = shadow
                # same stream as the honest update: identical batch and local noise
                upd = rule.local_update(shadow, knowledge.theta, R, spec, round_stream.derive(f"client/{i}"))
                flipped[i] = upd.submission
            return lf_craft(knowledge.submissions, flipped, cfg.lf_scale)
        if cfg.kind == "alie":
            v = alie_craft(knowledge, n, k, cfg.alie_z_max)
        elif cfg.kind == "ipm":
            v = ipm_craft(knowledge, cfg.ipm_scale)
        else:
            v = mtb_craft(knowledge, n, k, cfg.mtb_gamma_max, cfg.mtb_perturbation, cfg.mtb_iterations)
        return {i: v.copy() for i in self.byzantine}
