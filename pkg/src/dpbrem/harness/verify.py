"""Brute-force verification suites; each check reports observed vs bound."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..accountant import effective_sigma, epsilon_for, sensitivity
from ..core import RngStream, clip, l2_norm
from ..learner import ModelSpec, fd_gradient_oracle, init_model, per_record_grad
from ..protocol import clipped_local_gradient, momentum_step
from ..secure_agg.field import MERSENNE61
from ..secure_agg.shamir import SharingConfig, Share, reconstruct, robust_reconstruct, share

ClipFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    observed: float
    bound: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.suite}/{self.name}: observed={self.observed:.6g} bound={self.bound:.6g}"


# ---------------------------------------------------------------------------
# accountant
# ---------------------------------------------------------------------------

GOLDEN = ((0.15, 1.0), (0.06, 3.0), (0.029, 8.0))


def suite_accountant() -> list[Check]:
    """Solved epsilon against the reference (sigma, epsilon) pairs, 5% band."""
    T, q, p, n, delta = 1000, 1.0, 0.05, 600, 1e-6
    # R / 2C below p n, so the record-sampling branch sets sigma_i
    R, C = 1.0, 1.0
    out = []
    for sigma, target in GOLDEN:
        eps = epsilon_for(T, q, p, effective_sigma(sigma, R, C, p, n), delta)
        rel = abs(eps - target) / target
        out.append(Check("accountant", f"sigma={sigma}", rel, 0.05, rel <= 0.05))
    return out


# ---------------------------------------------------------------------------
# clipping distance
# ---------------------------------------------------------------------------


def suite_clipping(clip_fn: ClipFn = clip, trials: int = 100_000, seed: int = 0) -> list[Check]:
    """||clip(x) - clip(x + delta)|| <= min(2C, ||delta||) on random triples."""
    gen = RngStream.from_seed(seed).derive("verify/clipping").generator()
    dims = gen.integers(1, 65, size=trials)
    worst = -math.inf
    violations = 0
    for d in range(1, 65):
        idx = np.flatnonzero(dims == d)
        if not idx.size:
            continue
        k = idx.size
        C = np.exp(gen.uniform(-3, 3, size=k))
        x = gen.normal(size=(k, d)) * (C * np.exp(gen.uniform(-2, 2, size=k)))[:, None]
        delta = gen.normal(size=(k, d)) * (C * np.exp(gen.uniform(-3, 2, size=k)))[:, None]
        for i in range(k):
            lhs = l2_norm(clip_fn(x[i], C[i]) - clip_fn(x[i] + delta[i], C[i]))
            gap = lhs - min(2 * C[i], l2_norm(delta[i]))
            worst = max(worst, gap)
            violations += gap > 1e-9
    return [
        Check("clipping", "violations", violations, 0, violations == 0),
        Check("clipping", "max_excess", worst, 1e-9, worst <= 1e-9),
    ]


# ---------------------------------------------------------------------------
# sensitivity enumeration
# ---------------------------------------------------------------------------


def _lsq_grads(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-record gradients of (x . theta - y)^2."""
    return 2.0 * (x @ theta - y)[:, None] * x


def sensitivity_enumeration(
    R: float, C: float, p: float = 0.4, n: int = 5, d: int = 3, T: int = 3, beta: float = 0.9, seed: int = 0
) -> tuple[float, float]:
    """(max ||Q_t(D) - Q_t(D')||, S) over every batch sequence and neighbour.

    One client, a least-squares model and fixed released history (models and
    noisy momenta). The neighbour D' swaps one record for a null record whose
    gradient is zero, keeping p and n fixed.
    """
    gen = RngStream.from_seed(seed).derive("verify/sensitivity").generator()
    x = gen.normal(size=(n, d)) * 2.0
    y = gen.normal(size=n) * 3.0
    thetas = gen.normal(size=(T, d))
    released = gen.normal(size=(T, d)) * 0.5
    grads = [_lsq_grads(thetas[t], x, y) for t in range(T)]
    subsets = [np.array(s, dtype=int) for k in range(n + 1) for s in itertools.combinations(range(n), k)]
    worst = 0.0

    # datasets: index 0 is D, index 1 + j has record j nulled
    def recurse(t: int, momenta: list[np.ndarray | None]) -> None:
        nonlocal worst
        if t == T:
            return
        for batch in subsets:
            nxt = []
            for which in range(n + 1):
                g = grads[t][batch].copy()
                if which:
                    g[batch == which - 1] = 0.0
                gbar, _ = clipped_local_gradient(g, R, p, n)
                nxt.append(momentum_step(momenta[which], gbar, beta))
            q_base = clip(nxt[0] - released[t], C)
            for which in range(1, n + 1):
                worst = max(worst, l2_norm(q_base - clip(nxt[which] - released[t], C)))
            recurse(t + 1, nxt)

    recurse(0, [None] * (n + 1))
    return worst, sensitivity(R, C, p, n)


def suite_sensitivity() -> list[Check]:
    out = []
    # p n = 2: (R, C) = (1, 0.1) puts 2C below R / pn, (0.1, 1) the reverse
    for label, R, C in (("small_C", 1.0, 0.1), ("small_R", 0.1, 1.0)):
        worst, S = sensitivity_enumeration(R, C)
        out.append(Check("sensitivity", f"{label}_max_change", worst, S + 1e-9, worst <= S + 1e-9))
        out.append(Check("sensitivity", f"{label}_ratio", worst / S, 1.0, worst / S <= 1.0 + 1e-9))
    return out


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def suite_gradients(pairs: int = 100, seed: int = 0) -> list[Check]:
    out = []
    specs = (ModelSpec("logistic_regression", 6, 4), ModelSpec("mlp", 5, 3, 7))
    for spec in specs:
        root = RngStream.from_seed(seed).derive(f"verify/gradients/{spec.kind}")
        gen = root.generator()
        worst = 0.0
        for k in range(pairs):
            # initialization scale keeps gradients above the finite-difference roundoff floor
            theta = init_model(spec, root.derive(k)) + 0.1 * gen.normal(size=spec.n_params)
            xi = gen.normal(size=spec.d_in)
            yi = int(gen.integers(spec.n_classes))
            analytic = per_record_grad(theta, xi, yi, spec)
            numeric = fd_gradient_oracle(theta, xi, yi, spec)
            rel = l2_norm(analytic - numeric) / max(l2_norm(numeric), 1e-12)
            worst = max(worst, rel)
        out.append(Check("gradients", f"{spec.kind}_max_rel_error", worst, 1e-5, worst <= 1e-5))
    return out


# ---------------------------------------------------------------------------
# Shamir sharing
# ---------------------------------------------------------------------------


def suite_shamir(seed: int = 0) -> list[Check]:
    """Every (errors, erasures) placement within the bound at n=10, t=4, P=257."""
    cfg = SharingConfig(10, 4, 257)
    root = RngStream.from_seed(seed).derive("verify/shamir")
    gen = root.derive("values").generator()
    cases = wrong = 0
    for q in range(4):
        for e in range(7 - 2 * q):
            for bad in itertools.combinations(range(cfg.n), q):
                rest = [j for j in range(cfg.n) if j not in bad]
                for gone in itertools.combinations(rest, e):
                    secret = int(gen.integers(cfg.P))
                    shares = share(secret, cfg, root.derive(f"{q}/{e}/{cases}"))
                    kept = []
                    for j, s in enumerate(shares):
                        if j in gone:
                            continue
                        if j in bad:
                            s = Share(s.point, (s.value + int(gen.integers(1, cfg.P))) % cfg.P)
                        kept.append(s)
                    cases += 1
                    wrong += robust_reconstruct(kept, cfg) != secret
    big = SharingConfig(10, 4, MERSENNE61)
    gen = root.derive("big").generator()
    trips = mismatches = 0
    for i in range(1000):
        secret = int(gen.integers(MERSENNE61))
        mismatches += reconstruct(share(secret, big, root.derive(f"big/{i}")), big) != secret
        trips += 1
    return [
        Check("shamir", f"robust_failures_of_{cases}", wrong, 0, wrong == 0),
        Check("shamir", f"roundtrip_failures_of_{trips}", mismatches, 0, mismatches == 0),
    ]


# ---------------------------------------------------------------------------
# momentum closed form
# ---------------------------------------------------------------------------


def momentum_closed_form(grads: np.ndarray, beta: float) -> np.ndarray:
    """beta^(t-1) g_1 + (1 - beta) sum_{k>=2} beta^(t-k) g_k."""
    t = grads.shape[0]
    out = beta ** (t - 1) * grads[0]
    for k in range(2, t + 1):
        out = out + (1.0 - beta) * beta ** (t - k) * grads[k - 1]
    return out


def suite_momentum(sequences: int = 100, seed: int = 0) -> list[Check]:
    gen = RngStream.from_seed(seed).derive("verify/momentum").generator()
    worst = 0.0
    for _ in range(sequences):
        t = int(gen.integers(1, 51))
        d = int(gen.integers(1, 20))
        beta = float(gen.uniform(0, 0.99))
        grads = gen.normal(size=(t, d))
        m = None
        for g in grads:
            m = momentum_step(m, g, beta)
        worst = max(worst, float(np.max(np.abs(m - momentum_closed_form(grads, beta)))))
    return [Check("momentum", "max_abs_difference", worst, 1e-12, worst <= 1e-12)]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "accountant": suite_accountant,
    "clipping": suite_clipping,
    "sensitivity": suite_sensitivity,
    "gradients": suite_gradients,
    "shamir": suite_shamir,
    "momentum": suite_momentum,
}


def verify(name: str) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES.values() for c in suite()]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected all or one of {', '.join(SUITES)}")
    return SUITES[name]()
