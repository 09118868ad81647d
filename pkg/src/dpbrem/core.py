"""Vector math, clipping and hierarchical random streams.

Every vector in the learning path (parameters, gradients, momenta, noise) is a
1-D float64 numpy array. Randomness is drawn exclusively from ``RngStream``
values, which are immutable and derived by labelled paths so that a given
(seed, path) pair always yields the same samples regardless of call order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_ROOT_TAG = b"dpbrem/root"


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm; 0 for an empty vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    return float(np.linalg.norm(v))


def clip(v: np.ndarray, bound: float) -> np.ndarray:
    """Scale ``v`` onto the L2 ball of radius ``bound`` if it lies outside.

    Returns a new array; vectors already inside the ball are copied unchanged.
    """
    if not bound > 0:
        raise ValueError(f"clip bound must be positive, got {bound!r}")
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("clip input contains non-finite entries")
    norm = l2_norm(v)
    if norm <= bound:
        return v.copy()
    factor = bound / norm
    out = v * factor
    # rounding can leave the result an ulp outside the ball; step the factor down
    while l2_norm(out) > bound:
        factor = np.nextafter(factor, 0.0)
        out = v * factor
    return out


def clip_rows(rows: np.ndarray, bound: float) -> tuple[np.ndarray, int]:
    """Clip every row of a 2-D array independently.

    Returns the clipped rows and the number of rows that were scaled down.
    """
    if not bound > 0:
        raise ValueError(f"clip bound must be positive, got {bound!r}")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        return rows.copy(), 0
    norms = np.linalg.norm(rows, axis=1)
    over = norms > bound
    scale = np.ones_like(norms)
    scale[over] = bound / norms[over]
    out = rows * scale[:, None]
    # same guard as ``clip``, judged by ``l2_norm`` so both agree row by row
    for i in np.flatnonzero(over):
        while l2_norm(out[i]) > bound:
            scale[i] = np.nextafter(scale[i], 0.0)
            out[i] = rows[i] * scale[i]
    return out, int(np.count_nonzero(over))


def compensated_sum(rows: np.ndarray | list[np.ndarray], d: int | None = None) -> np.ndarray:
    """Neumaier-compensated sum of a stack of vectors, coordinate-wise.

    The result differs from the exactly rounded sum by at most a couple of
    ulps, so it is insensitive to the order in which rows are supplied.
    """
    if isinstance(rows, np.ndarray):
        seq = rows
    else:
        seq = list(rows)
    if len(seq) == 0:
        if d is None:
            raise ValueError("dimension required to sum an empty collection")
        return np.zeros(d)
    total = np.array(seq[0], dtype=np.float64, copy=True)
    comp = np.zeros_like(total)
    for row in seq[1:]:
        row = np.asarray(row, dtype=np.float64)
        t = total + row
        big = np.abs(total) >= np.abs(row)
        comp += np.where(big, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def _label_bytes(label: str | bytes | int) -> bytes:
    if isinstance(label, bytes):
        return label
    if isinstance(label, int):
        return str(label).encode()
    return label.encode("utf-8")


@dataclass(frozen=True)
class RngStream:
    """Immutable 256-bit seed plus the labels used to reach it.

    A stream is a value: asking it for samples twice yields the same samples.
    Callers obtain fresh randomness by deriving children with distinct labels.
    """

    seed: bytes
    path: tuple[bytes, ...] = ()

    @classmethod
    def from_seed(cls, seed: int | str | bytes) -> RngStream:
        material = _label_bytes(seed)
        digest = hashlib.sha256(_ROOT_TAG + len(material).to_bytes(8, "big") + material).digest()
        return cls(digest, ())

    def derive(self, label: str | bytes | int) -> RngStream:
        return derive_stream(self, label)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int.from_bytes(self.seed, "big"))))

    def uniform(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self.generator().random(size)

    def __repr__(self) -> str:
        path = "/".join(p.decode("utf-8", "replace") for p in self.path)
        return f"RngStream({self.seed[:4].hex()}…, path={path!r})"


def derive_stream(parent: RngStream, label: str | bytes | int) -> RngStream:
    """Child stream keyed by the parent seed and a length-prefixed label."""
    raw = _label_bytes(label)
    digest = hashlib.sha256(parent.seed + len(raw).to_bytes(8, "big") + raw).digest()
    return RngStream(digest, parent.path + (raw,))


def box_muller(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map uniforms u in (0, 1] and v in [0, 1) to two standard normal arrays."""
    radius = np.sqrt(-2.0 * np.log(u))
    angle = 2.0 * np.pi * v
    return radius * np.cos(angle), radius * np.sin(angle)


def gaussian_vector(stream: RngStream, d: int, stddev: float) -> np.ndarray:
    """``d`` i.i.d. N(0, stddev^2) samples via Box-Muller on the stream's uniforms."""
    if stddev < 0:
        raise ValueError(f"stddev must be nonnegative, got {stddev!r}")
    if stddev == 0 or d == 0:
        return np.zeros(d)
    pairs = (d + 1) // 2
    uniforms = stream.uniform((2, pairs))
    a, b = box_muller(1.0 - uniforms[0], uniforms[1])
    return stddev * np.concatenate([a, b])[:d]
