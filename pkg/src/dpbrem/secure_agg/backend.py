"""MPC backend interface and a sealed functional simulation of it.

Shared values are (n, m) uint64 matrices, row j being party j's shares. The
simulated backend opens its inputs with robust reconstruction (so corrupt
share-holders cannot derail it), evaluates the function in the clear, and
deals fresh shares of the result. It provides integrity, not privacy.
"""

from __future__ import annotations

import math
import threading
from typing import Protocol

import numpy as np

from ..core import RngStream, box_muller
from .fixed_point import FixedPointCodec
from .shamir import SharingConfig, robust_reconstruct_vector, share_vector


class Channel:
    """Delivery of shares to whoever reconstructs them.

    Rows of corrupt parties arrive as fresh random field elements and rows of
    dropped parties do not arrive at all.
    """

    def __init__(
        self,
        cfg: SharingConfig,
        stream: RngStream,
        corrupt: frozenset[int] = frozenset(),
        dropped: frozenset[int] = frozenset(),
    ) -> None:
        if corrupt & dropped:
            raise ValueError("a party cannot be both corrupt and dropped")
        self.cfg = cfg
        self.corrupt = frozenset(corrupt)
        self.dropped = frozenset(dropped)
        self._stream = stream
        self._count = 0
        self._lock = threading.Lock()

    def deliver(self, shares: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            self._count += 1
            label = self._count
        values = np.array(shares, dtype=np.uint64, copy=True)
        if self.corrupt:
            gen = self._stream.derive(label).generator()
            for j in sorted(self.corrupt):
                values[j] = self.cfg.field.random(gen, values.shape[1])
        present = np.ones(self.cfg.n, dtype=bool)
        present[list(self.dropped)] = False
        return values, present

    def open(self, shares: np.ndarray) -> np.ndarray:
        return robust_reconstruct_vector(*self.deliver(shares), self.cfg)


class MpcBackend(Protocol):
    cfg: SharingConfig

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...

    def less_equal_const(self, a: np.ndarray, bound: int) -> np.ndarray: ...

    def box_muller(
        self, u: np.ndarray, v: np.ndarray, scale: float, frac_bits: int, uniform_bits: int
    ) -> tuple[np.ndarray, np.ndarray]: ...


class SimulatedBackend:
    """Reference backend: open, compute, re-share."""

    def __init__(self, cfg: SharingConfig, stream: RngStream, channel: Channel | None = None) -> None:
        self.cfg = cfg
        self.channel = channel or Channel(cfg, stream.derive("channel"))
        self._stream = stream
        self._count = 0
        self._lock = threading.Lock()
        self.calls = 0

    def _fresh(self) -> RngStream:
        with self._lock:
            self._count += 1
            self.calls += 1
            return self._stream.derive(f"op/{self._count}")

    def _open(self, x: np.ndarray) -> np.ndarray:
        return self.channel.open(x)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        F = self.cfg.field
        left = self._open(a)
        right = left if b is a else self._open(b)
        return share_vector(F.mul(left, right), self.cfg, self._fresh())

    def xor(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a + b - 2ab on shared bits."""
        F = self.cfg.field
        return F.sub(F.add(a, b), F.scale(2, self.mul(a, b)))

    def less_equal_const(self, a: np.ndarray, bound: int) -> np.ndarray:
        F = self.cfg.field
        bits = (F.to_signed(self._open(a)) <= bound).astype(np.uint64)
        return share_vector(bits, self.cfg, self._fresh())

    def box_muller(
        self, u: np.ndarray, v: np.ndarray, scale: float, frac_bits: int, uniform_bits: int
    ) -> tuple[np.ndarray, np.ndarray]:
        F = self.cfg.field
        one = float(1 << frac_bits)
        u_real = F.to_signed(self._open(u)).astype(np.float64) / one
        v_real = F.to_signed(self._open(v)).astype(np.float64) / one
        u_real = np.where(u_real == 0.0, math.ldexp(1.0, -uniform_bits), u_real)
        a, b = box_muller(u_real, v_real)
        codec = FixedPointCodec(frac_bits, self.cfg.P, self.cfg.n + 1)
        stream = self._fresh()
        return (
            share_vector(codec.encode(scale * a), self.cfg, stream.derive("a")),
            share_vector(codec.encode(scale * b), self.cfg, stream.derive("b")),
        )
