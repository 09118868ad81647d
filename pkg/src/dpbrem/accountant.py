"""Record-level privacy accounting through Gaussian differential privacy.

Each client's view of the protocol is a subsampled Gaussian mechanism whose
noise-to-sensitivity ratio is the effective multiplier ``sigma_i``. The
central-limit approximation turns T subsampled rounds into a single mu-GDP
guarantee, which is then converted to an (epsilon, delta) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from scipy.special import ndtri

EPS_BRACKET_HI = 64.0
DELTA_REL_TOL = 1e-3
BRACKET_TOL = 1e-9


@dataclass(frozen=True)
class PrivacyConfig:
    T: int
    q: float
    p: float
    n: int
    R: float
    C: float
    sigma: float
    delta: float

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if not 0 < self.q <= 1 or not 0 < self.p <= 1:
            raise ValueError("sampling rates must lie in (0, 1]")
        if self.n <= 0:
            raise ValueError("local dataset size must be positive")
        if not self.R > 0 or not self.C > 0:
            raise ValueError("clipping bounds must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class AccountantReport:
    p: float
    n: int
    S: float
    sigma_i: float
    mu: float
    epsilon: float


def std_normal_cdf(x: float) -> float:
    """Phi(x) through the complementary error function.

    ``math.erfc`` keeps full relative precision in the lower tail, which is
    where the delta formula subtracts two tiny probabilities.
    """
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def std_normal_quantile(prob: float) -> float:
    if not 0 < prob < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {prob!r}")
    return float(ndtri(prob))


def sensitivity(R: float, C: float, p: float, n: int) -> float:
    """Largest change of the pre-noise sum when one record is added or removed."""
    if not R > 0 or not C > 0 or not p > 0 or not n > 0:
        raise ValueError("sensitivity inputs must be positive")
    return min(2.0 * C, R / (p * n))


def effective_sigma(sigma: float, R: float, C: float, p: float, n: int) -> float:
    """Noise multiplier relative to the sensitivity: sigma * max(R / 2C, p n)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if not R > 0 or not C > 0:
        raise ValueError("clipping bounds must be positive")
    return sigma * max(R / (2.0 * C), p * n)


def gdp_mu(T: int, q: float, p: float, sigma_i: float) -> float:
    """GDP parameter of T rounds of client sampling q and record sampling p.

    Returns ``math.inf`` when ``sigma_i`` is zero (no finite guarantee).
    """
    if T == 0:
        return 0.0
    if sigma_i < 0:
        raise ValueError("sigma_i must be nonnegative")
    if sigma_i == 0:
        return math.inf
    exponent = 1.0 / (2.0 * sigma_i * sigma_i)
    if exponent > 700:
        return math.inf
    return q * p * math.sqrt(T * math.expm1(exponent))


def gdp_to_delta(mu: float, eps: float) -> float:
    if mu <= 0:
        return 0.0
    if math.isinf(mu):
        return 1.0
    delta = std_normal_cdf(-eps / mu + mu / 2.0) - math.exp(eps) * std_normal_cdf(-eps / mu - mu / 2.0)
    return min(1.0, max(0.0, delta))


def solve_epsilon(mu: float, delta_target: float) -> float:
    """Smallest epsilon (up to the stopping rule) with delta(epsilon) <= target.

    Bisection on [0, 64]; the upper end doubles if 64 is not enough.
    """
    if not 0 < delta_target < 1:
        raise ValueError("delta target must lie in (0, 1)")
    if mu <= 0:
        return 0.0
    if math.isinf(mu):
        return math.inf
    if gdp_to_delta(mu, 0.0) <= delta_target:
        return 0.0
    lo, hi = 0.0, EPS_BRACKET_HI
    while gdp_to_delta(mu, hi) > delta_target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            return math.inf
    while True:
        mid = 0.5 * (lo + hi)
        delta = gdp_to_delta(mu, mid)
        if abs(delta - delta_target) <= DELTA_REL_TOL * delta_target or hi - lo <= BRACKET_TOL:
            return mid
        if delta > delta_target:
            lo = mid
        else:
            hi = mid


def gdp_mu_rounds(q: float, p: float, sigma_is: Iterable[float]) -> float:
    """GDP parameter of rounds whose effective multipliers differ.

    Reduces to ``gdp_mu`` when all entries are equal.
    """
    terms = []
    for s in sigma_is:
        if s < 0:
            raise ValueError("sigma_i must be nonnegative")
        if s == 0 or 1.0 / (2.0 * s * s) > 700:
            return math.inf
        terms.append(math.expm1(1.0 / (2.0 * s * s)))
    return q * p * math.sqrt(math.fsum(terms))


def compose_gdp(mus: Iterable[float]) -> float:
    return math.sqrt(math.fsum(m * m for m in mus))


def epsilon_for(T: int, q: float, p: float, sigma_i: float, delta: float) -> float:
    return solve_epsilon(gdp_mu(T, q, p, sigma_i), delta)


def report(cfg: PrivacyConfig) -> AccountantReport:
    S = sensitivity(cfg.R, cfg.C, cfg.p, cfg.n)
    sigma_i = effective_sigma(cfg.sigma, cfg.R, cfg.C, cfg.p, cfg.n)
    mu = gdp_mu(cfg.T, cfg.q, cfg.p, sigma_i)
    return AccountantReport(cfg.p, cfg.n, S, sigma_i, mu, solve_epsilon(mu, cfg.delta))


def client_reports(
    T: int,
    q: float,
    R: float,
    C: float,
    sigma: float,
    delta: float,
    clients: Iterable[tuple[float, int]],
) -> list[AccountantReport]:
    """One report per distinct (p_i, n_i) pair, sorted by that pair."""
    return [report(PrivacyConfig(T, q, p, n, R, C, sigma, delta)) for p, n in sorted(set(clients))]


def calibrate_sigma(
    target_epsilon: float,
    delta: float,
    epsilon_of_sigma,
    lo: float = 1e-4,
    hi: float = 1e3,
    rel_tol: float = 1e-6,
) -> float:
    """Smallest sigma whose solved epsilon does not exceed ``target_epsilon``.

    ``epsilon_of_sigma`` must be nonincreasing in sigma.
    """
    if not target_epsilon > 0:
        raise ValueError("target epsilon must be positive")
    if epsilon_of_sigma(hi) > target_epsilon:
        raise ValueError(f"no sigma below {hi} reaches epsilon {target_epsilon}")
    if epsilon_of_sigma(lo) <= target_epsilon:
        return lo
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if epsilon_of_sigma(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    return hi
