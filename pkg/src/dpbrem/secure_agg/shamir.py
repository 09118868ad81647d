"""Shamir t-of-n sharing over a prime field with Reed-Solomon robust reconstruction.

Party ``j`` (0-based) holds the evaluation at point ``j + 1``. Robust
reconstruction uses Gao's decoder: interpolate the received word, run the
extended Euclidean algorithm against prod(x - a_i) until the remainder
degree drops below (N + t) / 2, then divide. A residual check on the decoded
polynomial guarantees that failures are reported instead of returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..core import RngStream
from .field import MERSENNE61, PrimeField


class DecodingError(ValueError):
    """Too many errors or erasures to recover the secret."""


@dataclass(frozen=True)
class SharingConfig:
    n: int
    t: int
    P: int = MERSENNE61

    def __post_init__(self) -> None:
        if not 1 <= self.t <= self.n:
            raise ValueError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        if self.n >= self.P:
            raise ValueError("more parties than nonzero field elements")

    @property
    def field(self) -> PrimeField:
        return _field(self.P)

    @property
    def points(self) -> np.ndarray:
        return np.arange(1, self.n + 1, dtype=np.uint64)

    def tolerates(self, errors: int, erasures: int) -> bool:
        return 2 * errors + erasures < self.n - self.t + 1


_FIELDS: dict[int, PrimeField] = {}


def _field(P: int) -> PrimeField:
    if P not in _FIELDS:
        _FIELDS[P] = PrimeField(P)
    return _FIELDS[P]


@dataclass(frozen=True)
class Share:
    point: int
    value: int


# ---------------------------------------------------------------------------
# Sharing and plain reconstruction
# ---------------------------------------------------------------------------


def share_vector(secrets: np.ndarray, cfg: SharingConfig, stream: RngStream) -> np.ndarray:
    """Share every entry of ``secrets``; row j holds party j's shares."""
    F = cfg.field
    secrets = F.array(np.asarray(secrets).ravel())
    coeffs = F.random(stream.generator(), (cfg.t - 1, secrets.size))
    x = cfg.points[:, None]
    acc = np.zeros((cfg.n, secrets.size), dtype=np.uint64)
    # Horner from the top coefficient down to the secret, all parties at once
    for c in coeffs[::-1]:
        acc = F.add(F.mul(acc, x), c[None, :])
    out = F.add(F.mul(acc, x), secrets[None, :])
    return out


def share(secret: int, cfg: SharingConfig, stream: RngStream) -> list[Share]:
    col = share_vector(np.array([secret % cfg.P], dtype=np.uint64), cfg, stream)[:, 0]
    return [Share(j + 1, int(v)) for j, v in enumerate(col)]


def lagrange_at_zero(points: Sequence[int], P: int) -> list[int]:
    """Weights w_j with f(0) = sum_j w_j f(x_j) for deg f < len(points)."""
    pts = [int(x) % P for x in points]
    if len(set(pts)) != len(pts):
        raise ValueError("duplicate evaluation points")
    weights = []
    for j, xj in enumerate(pts):
        num, den = 1, 1
        for k, xk in enumerate(pts):
            if k != j:
                num = num * (-xk) % P
                den = den * (xj - xk) % P
        weights.append(num * pow(den, P - 2, P) % P)
    return weights


@lru_cache(maxsize=256)
def _weights_at_zero(points: tuple[int, ...], P: int) -> np.ndarray:
    return np.array(lagrange_at_zero(points, P), dtype=np.uint64)


def reconstruct(shares: Sequence[Share], cfg: SharingConfig) -> int:
    """Lagrange interpolation at 0 from the first t shares (assumed correct)."""
    points = [s.point for s in shares]
    if len(set(points)) != len(points):
        raise ValueError("duplicate share points")
    if len(shares) < cfg.t:
        raise ValueError(f"need {cfg.t} shares, got {len(shares)}")
    use = shares[: cfg.t]
    weights = lagrange_at_zero([s.point for s in use], cfg.P)
    return sum(w * s.value for w, s in zip(weights, use)) % cfg.P


def reconstruct_vector(rows: np.ndarray, points: Sequence[int], cfg: SharingConfig) -> np.ndarray:
    """Column-wise reconstruction from the first t rows of an error-free share matrix."""
    if len(points) < cfg.t:
        raise ValueError(f"need {cfg.t} shares, got {len(points)}")
    F = cfg.field
    weights = lagrange_at_zero(list(points)[: cfg.t], cfg.P)
    acc = np.zeros(rows.shape[1], dtype=np.uint64)
    for w, row in zip(weights, rows[: cfg.t]):
        acc = F.add(acc, F.scale(w, row))
    return acc


# ---------------------------------------------------------------------------
# Polynomials as coefficient lists, lowest degree first
# ---------------------------------------------------------------------------


def _trim(a: list[int]) -> list[int]:
    while a and a[-1] == 0:
        a.pop()
    return a


def _deg(a: list[int]) -> int:
    return len(a) - 1


def _sub(a: list[int], b: list[int], P: int) -> list[int]:
    n = max(len(a), len(b))
    return _trim([((a[i] if i < len(a) else 0) - (b[i] if i < len(b) else 0)) % P for i in range(n)])


def _mul(a: list[int], b: list[int], P: int) -> list[int]:
    if not a or not b:
        return []
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] = (out[i + j] + x * y) % P
    return _trim(out)


def _divmod(a: list[int], b: list[int], P: int) -> tuple[list[int], list[int]]:
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    rem = list(a)
    inv_lead = pow(b[-1], P - 2, P)
    quot = [0] * max(len(a) - len(b) + 1, 0)
    while len(rem) >= len(b) and rem:
        shift = len(rem) - len(b)
        coef = rem[-1] * inv_lead % P
        quot[shift] = coef
        for i, y in enumerate(b):
            rem[shift + i] = (rem[shift + i] - coef * y) % P
        _trim(rem)
    return _trim(quot), rem


def _eval(a: list[int], x: int, P: int) -> int:
    acc = 0
    for c in reversed(a):
        acc = (acc * x + c) % P
    return acc


def _vanishing(points: Sequence[int], P: int) -> list[int]:
    out = [1]
    for a in points:
        out = _mul(out, [(-a) % P, 1], P)
    return out


def interpolate(points: Sequence[int], values: Sequence[int], P: int) -> list[int]:
    """Coefficients of the unique polynomial of degree < N through the points."""
    g0 = _vanishing(points, P)
    out = [0] * len(points)
    for a, y in zip(points, values):
        basis, _ = _divmod(g0, [(-a) % P, 1], P)
        scale = y * pow(_eval(basis, a, P), P - 2, P) % P
        for k, c in enumerate(basis):
            out[k] = (out[k] + scale * c) % P
    return _trim(out)


def gao_decode(points: Sequence[int], values: Sequence[int], k: int, P: int) -> list[int]:
    """Message polynomial (degree < k) of a Reed-Solomon word with erasures removed."""
    pts = [int(a) % P for a in points]
    vals = [int(v) % P for v in values]
    N = len(pts)
    if N < k:
        raise DecodingError(f"{N} shares cannot determine a degree-{k - 1} polynomial")
    g0 = _vanishing(pts, P)
    g1 = interpolate(pts, vals, P)
    r0, r1 = g0, g1
    v0, v1 = [], [1]
    while _deg(r1) >= (N + k) / 2:
        quot, rem = _divmod(r0, r1, P)
        r0, r1 = r1, rem
        v0, v1 = v1, _sub(v0, _mul(quot, v1, P), P)
    if not v1:
        raise DecodingError("degenerate error locator")
    f, rem = _divmod(r1, v1, P)
    if rem or _deg(f) >= k:
        raise DecodingError("received word is not within the decoding radius")
    wrong = sum(_eval(f, a, P) != v for a, v in zip(pts, vals))
    if 2 * wrong > N - k:
        raise DecodingError(f"residual check failed: {wrong} mismatches among {N} shares")
    return f


def robust_reconstruct(shares: Sequence[Share], cfg: SharingConfig) -> int:
    """Secret from shares that may contain errors; missing shares are simply absent."""
    points = [s.point for s in shares]
    if len(set(points)) != len(points):
        raise ValueError("duplicate share points")
    f = gao_decode(points, [s.value for s in shares], cfg.t, cfg.P)
    return f[0] if f else 0


@lru_cache(maxsize=256)
def _basis_matrix(all_points: tuple[int, ...], basis_points: tuple[int, ...], P: int) -> np.ndarray:
    """L[i][j] = value at all_points[i] of the j-th Lagrange basis polynomial."""
    out = []
    for x in all_points:
        row = []
        for j, xj in enumerate(basis_points):
            num, den = 1, 1
            for k, xk in enumerate(basis_points):
                if k != j:
                    num = num * (x - xk) % P
                    den = den * (xj - xk) % P
            row.append(num * pow(den, P - 2, P) % P)
        out.append(row)
    return np.array(out, dtype=np.uint64)


def robust_reconstruct_vector(rows: np.ndarray, present: np.ndarray, cfg: SharingConfig) -> np.ndarray:
    """Column-wise robust reconstruction of an (n, m) share matrix.

    A column is accepted through the fast path when the polynomial through t
    trusted shares disagrees with at most (N - t) / 2 received shares, which
    is exactly the unique-decoding radius. Columns that fail fall back to the
    Gao decoder, whose error positions are then excluded from later fast-path
    attempts.
    """
    F = cfg.field
    P = cfg.P
    rows = np.asarray(rows, dtype=np.uint64)
    present = np.asarray(present, dtype=bool)
    if rows.shape[0] != cfg.n or present.shape != (cfg.n,):
        raise ValueError("share matrix must have one row per party")
    idx = np.flatnonzero(present)
    N, m, k = idx.size, rows.shape[1], cfg.t
    if N < k:
        raise DecodingError(f"only {N} of the required {k} shares arrived")
    pts = [int(i) + 1 for i in idx]
    vals = rows[idx]
    radius = (N - k) // 2
    result = np.zeros(m, dtype=np.uint64)
    pending = np.arange(m)
    suspects: set[int] = set()
    while pending.size:
        trusted = [r for r in range(N) if r not in suspects][:k]
        if len(trusted) < k:
            break
        # trusted rows agree with their own interpolant; only the others need checking
        others = [r for r in range(N) if r not in trusted]
        basis = _basis_matrix(tuple(pts[r] for r in others), tuple(pts[r] for r in trusted), P)
        weights = _weights_at_zero(tuple(pts[r] for r in trusted), P)
        sub = vals[:, pending]
        base = sub[trusted]
        if others:
            pred = F.sum(F.mul(basis[:, :, None], base[None, :, :]), axis=1)
            mismatches = (pred != sub[others]).sum(axis=0)
        else:
            mismatches = np.zeros(pending.size, dtype=np.int64)
        ok = mismatches <= radius
        secret = F.sum(F.mul(weights[:, None], base), axis=0)
        result[pending[ok]] = secret[ok]
        pending = pending[~ok]
        if not pending.size:
            break
        col = int(pending[0])
        column = [int(v) for v in vals[:, col]]
        f = gao_decode(pts, column, k, P)
        result[col] = f[0] if f else 0
        pending = pending[1:]
        fresh = {r for r in range(N) if _eval(f, pts[r], P) != column[r]} - suspects
        if not fresh:
            break
        suspects |= fresh
    for col in pending:
        column = [int(v) for v in vals[:, col]]
        f = gao_decode(pts, column, k, P)
        result[col] = f[0] if f else 0
    return result
