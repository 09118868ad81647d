"""Vectorised arithmetic modulo a prime held in uint64 numpy arrays.

Three multiplication paths:

* P = 2^61 - 1 splits operands into 31-bit limbs and folds with 2^61 = 1,
  so every intermediate fits in 64 bits.
* P < 2^32 multiplies directly.
* any other prime below 2^62 falls back to Python integers.
"""

from __future__ import annotations

import numpy as np

MERSENNE61 = (1 << 61) - 1

_U = np.uint64
_M30 = _U((1 << 30) - 1)
_M31 = _U((1 << 31) - 1)
_M32 = _U((1 << 32) - 1)
_M61 = _U(MERSENNE61)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for p in small:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


class PrimeField:
    def __init__(self, P: int = MERSENNE61) -> None:
        if not 2 < P < (1 << 62) or not is_prime(P):
            raise ValueError(f"modulus must be an odd prime below 2^62, got {P}")
        self.P = P
        self._P = _U(P)

    def __repr__(self) -> str:
        return f"PrimeField({self.P})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrimeField) and other.P == self.P

    def __hash__(self) -> int:
        return hash(self.P)

    def array(self, values) -> np.ndarray:
        """Reduce integers (Python ints or signed arrays) into [0, P) as uint64."""
        arr = np.asarray(values)
        if arr.dtype == object:
            return np.array([int(v) % self.P for v in arr.ravel()], dtype=np.uint64).reshape(arr.shape)
        if arr.dtype.kind in "iu":
            if arr.dtype.kind == "i":
                arr = np.mod(arr.astype(np.int64), np.int64(self.P))
            return (arr.astype(np.uint64) % self._P).astype(np.uint64)
        raise TypeError(f"cannot map dtype {arr.dtype} into the field")

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        s = np.asarray(a, dtype=np.uint64) + np.asarray(b, dtype=np.uint64)
        return s - self._P * (s >= self._P)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        return (a + self._P * (a < b)) - b

    def neg(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.uint64)
        return np.where(a == 0, a, self._P - a)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        if self.P == MERSENNE61:
            return _mul_m61(a, b)
        if self.P < (1 << 32):
            return (a * b) % self._P
        prod = np.multiply(a.astype(object), b.astype(object)) % self.P
        return np.asarray(prod, dtype=np.uint64)

    def scale(self, c: int, a: np.ndarray) -> np.ndarray:
        return self.mul(_U(c % self.P), a)

    def sum(self, a: np.ndarray, axis: int = 0) -> np.ndarray:
        """Modular sum along an axis without 64-bit overflow."""
        a = np.asarray(a, dtype=np.uint64)
        if a.shape[axis] >= (1 << 31):
            raise ValueError("too many terms for a single modular sum")
        hi = (a >> _U(32)).sum(axis=axis, dtype=np.uint64)
        lo = (a & _M32).sum(axis=axis, dtype=np.uint64)
        hi = hi % self._P
        return self.add(self.mul(hi, _U((1 << 32) % self.P)), lo % self._P)

    def inv(self, x: int) -> int:
        x %= self.P
        if x == 0:
            raise ZeroDivisionError("zero has no inverse")
        return pow(x, self.P - 2, self.P)

    def random(self, gen: np.random.Generator, shape) -> np.ndarray:
        return gen.integers(0, self.P, size=shape, dtype=np.uint64)

    def to_signed(self, a: np.ndarray) -> np.ndarray:
        """Centre lift: values above P/2 map to negatives."""
        a = np.asarray(a, dtype=np.uint64)
        half = self._P // _U(2)
        out = a.astype(np.int64)
        neg = a > half
        out[neg] = -((self._P - a[neg]).astype(np.int64))
        return out


def _mul_m61(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ah, al = a >> _U(31), a & _M31
    bh, bl = b >> _U(31), b & _M31
    mid = ah * bl + al * bh
    # a*b = ah*bh*2^62 + mid*2^31 + al*bl and 2^61 = 1 (mod P)
    s = ((ah * bh) << _U(1)) + (mid >> _U(30)) + ((mid & _M30) << _U(31)) + al * bl
    s = (s & _M61) + (s >> _U(61))
    return s - _M61 * (s >= _M61)
