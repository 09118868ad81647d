"""Signed fixed-point numbers embedded in a prime field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import MERSENNE61, PrimeField


class FixedPointOverflow(OverflowError):
    pass


@dataclass(frozen=True)
class FixedPointCodec:
    """round(x * 2^f) stored as a field element, negatives as P - |raw|.

    ``n_terms`` is how many encoded values may later be summed; every raw
    value must stay below P / (2 n_terms) in magnitude so the sum cannot wrap.
    """

    frac_bits: int = 16
    P: int = MERSENNE61
    n_terms: int = 1

    def __post_init__(self) -> None:
        if self.frac_bits < 0 or self.n_terms < 1:
            raise ValueError("need frac_bits >= 0 and n_terms >= 1")

    @property
    def limit(self) -> int:
        return self.P // (2 * self.n_terms)

    @property
    def field(self) -> PrimeField:
        from .shamir import _field

        return _field(self.P)

    def raw(self, x) -> np.ndarray:
        scaled = np.rint(np.asarray(x, dtype=np.float64) * float(1 << self.frac_bits))
        if not np.all(np.isfinite(scaled)) or np.any(np.abs(scaled) >= self.limit):
            raise FixedPointOverflow(f"value exceeds the fixed-point range ±{self.limit / (1 << self.frac_bits):.6g}")
        return scaled.astype(np.int64)

    def encode(self, x) -> np.ndarray:
        return self.field.array(self.raw(x))

    def decode(self, v) -> np.ndarray:
        return self.field.to_signed(v).astype(np.float64) / float(1 << self.frac_bits)


def fxp_encode(x: float, f: int = 16, P: int = MERSENNE61, n_terms: int = 1) -> int:
    return int(FixedPointCodec(f, P, n_terms).encode(np.array([x]))[0])


def fxp_decode(v: int, f: int = 16, P: int = MERSENNE61) -> float:
    return float(FixedPointCodec(f, P).decode(np.array([v], dtype=np.uint64))[0])
