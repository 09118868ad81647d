"""Datasets, non-IID partitioning, Poisson record sampling and IDX ingestion."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream


@dataclass(frozen=True)
class Dataset:
    """Feature matrix and integer labels.

    ``ids`` holds each record's index in the dataset it was carved from, so
    partitions can be checked for disjointness against their source.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise ValueError("features must be (n, d_in) and labels (n,)")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        ids = np.arange(labels.size) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def d_in(self) -> int:
        return int(self.features.shape[1])

    def subset(self, index: np.ndarray) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.n_classes, self.ids[index])

    def with_labels(self, labels: np.ndarray) -> Dataset:
        return Dataset(self.features, labels, self.n_classes, self.ids)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "shards"
    n_clients: int = 1
    shards_per_client: int = 2
    alpha: float = 0.9

    def __post_init__(self) -> None:
        if self.scheme not in {"shards", "dirichlet", "uniform"}:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.n_clients < 1:
            raise ValueError("n_clients must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def class_means(stream: RngStream, d_in: int, n_classes: int, separation: float) -> np.ndarray:
    """Cluster centres with pairwise distance ``separation``.

    When ``n_classes <= d_in`` the centres are scaled axis vectors, so every
    pair is exactly ``separation`` apart. Otherwise the centres sit on random
    directions with radius ``separation / sqrt(2)``, which matches that
    spacing on average.
    """
    radius = separation / math.sqrt(2.0)
    if n_classes <= d_in:
        means = np.zeros((n_classes, d_in))
        means[np.arange(n_classes), np.arange(n_classes)] = radius
        return means
    raw = stream.generator().standard_normal((n_classes, d_in))
    return radius * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def gen_synthetic(
    stream: RngStream,
    n_records: int,
    d_in: int,
    n_classes: int,
    class_separation: float,
    label_noise: float = 0.0,
) -> Dataset:
    """Gaussian clusters with unit within-class variance and balanced classes.

    A ``label_noise`` fraction of records receives a label drawn uniformly
    from the other classes, so ``label_noise = 1 - 1/L`` makes labels
    independent of features.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_records < n_classes:
        raise ValueError("need at least one record per class")
    if not class_separation > 0:
        raise ValueError("class separation must be positive")
    if not 0 <= label_noise < 1:
        raise ValueError("label noise must lie in [0, 1)")
    gen = stream.derive("records").generator()
    means = class_means(stream.derive("means"), d_in, n_classes, class_separation)
    true_labels = np.arange(n_records) % n_classes
    features = means[true_labels] + gen.standard_normal((n_records, d_in))
    labels = true_labels.copy()
    n_noisy = int(round(label_noise * n_records))
    if n_noisy:
        noisy = gen.choice(n_records, size=n_noisy, replace=False)
        shift = gen.integers(1, n_classes, size=n_noisy)
        labels[noisy] = (true_labels[noisy] + shift) % n_classes
    missing = np.setdiff1d(np.arange(n_classes), labels)
    # label noise can, for tiny n, wipe out a class; restore one clean record each
    for cls in missing:
        labels[np.flatnonzero(true_labels == cls)[0]] = cls
    order = gen.permutation(n_records)
    return Dataset(features[order], labels[order], n_classes)


def split(d: Dataset, n_first: int) -> tuple[Dataset, Dataset]:
    """Leading ``n_first`` records and the rest, with ids reset per part."""
    first = Dataset(d.features[:n_first], d.labels[:n_first], d.n_classes)
    rest = Dataset(d.features[n_first:], d.labels[n_first:], d.n_classes)
    return first, rest


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def partition_shards(d: Dataset, n_clients: int, shards_per_client: int, stream: RngStream) -> list[Dataset]:
    """Label-sorted contiguous shards dealt out at random.

    Records beyond the largest multiple of ``n_clients * shards_per_client``
    (after sorting) are dropped so every shard has the same size.
    """
    if shards_per_client < 1:
        raise ValueError("shards_per_client must be at least 1")
    if n_clients < 1:
        raise ValueError("n_clients must be at least 1")
    n_shards = n_clients * shards_per_client
    shard_size = len(d) // n_shards
    if shard_size == 0:
        raise ValueError(f"{len(d)} records cannot fill {n_shards} shards")
    order = np.argsort(d.labels, kind="stable")[: n_shards * shard_size]
    shards = order.reshape(n_shards, shard_size)
    assignment = stream.generator().permutation(n_shards).reshape(n_clients, shards_per_client)
    return [d.subset(np.sort(shards[row].ravel())) for row in assignment]


def partition_dirichlet(d: Dataset, n_clients: int, alpha: float, stream: RngStream) -> list[Dataset]:
    """Per-class client proportions drawn from Dirichlet(alpha).

    Empty clients are repaired by moving one record from the currently
    largest client, repeated until none is empty.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if n_clients < 1:
        raise ValueError("n_clients must be at least 1")
    if len(d) < n_clients:
        raise ValueError("fewer records than clients")
    counts = np.bincount(d.labels, minlength=d.n_classes)
    if np.any(counts == 0):
        raise ValueError(f"classes {np.flatnonzero(counts == 0).tolist()} have no records")
    gen = stream.generator()
    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in range(d.n_classes):
        members = np.flatnonzero(d.labels == cls)
        members = members[gen.permutation(members.size)]
        props = gen.dirichlet(np.full(n_clients, alpha))
        cuts = np.floor(np.cumsum(props)[:-1] * members.size).astype(np.int64)
        for client, part in enumerate(np.split(members, cuts)):
            buckets[client].extend(part.tolist())
    while True:
        sizes = [len(b) for b in buckets]
        empty = [i for i, s in enumerate(sizes) if s == 0]
        if not empty:
            break
        donor = int(np.argmax(sizes))
        buckets[empty[0]].append(buckets[donor].pop())
    return [d.subset(np.sort(np.array(b, dtype=np.int64))) for b in buckets]


def partition_uniform(d: Dataset, n_clients: int, stream: RngStream) -> list[Dataset]:
    if n_clients < 1 or len(d) < n_clients:
        raise ValueError("need 1 <= n_clients <= records")
    perm = stream.generator().permutation(len(d))
    return [d.subset(np.sort(part)) for part in np.array_split(perm, n_clients)]


def partition(d: Dataset, spec: PartitionSpec, stream: RngStream) -> list[Dataset]:
    if spec.scheme == "shards":
        return partition_shards(d, spec.n_clients, spec.shards_per_client, stream)
    if spec.scheme == "dirichlet":
        return partition_dirichlet(d, spec.n_clients, spec.alpha, stream)
    return partition_uniform(d, spec.n_clients, stream)


def poisson_mask(n: int, p: float, stream: RngStream) -> np.ndarray:
    if not 0 < p <= 1:
        raise ValueError("sampling rate must lie in (0, 1]")
    if p == 1:
        return np.ones(n, dtype=bool)
    return stream.uniform(n) < p


def poisson_sample(d: Dataset, p: float, stream: RngStream) -> Dataset:
    """Each record kept independently with probability ``p``."""
    return d.subset(np.flatnonzero(poisson_mask(len(d), p, stream)))


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

IDX_MAX_ELEMENTS = 1 << 40


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


def read_idx(path: str | Path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IdxMagicError(f"{path}: bad IDX magic {raw[:4].hex()}")
    rank = raw[3]
    if rank == 0:
        raise IdxDimensionError(f"{path}: rank 0 is not supported")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    total = math.prod(dims)
    if total > IDX_MAX_ELEMENTS:
        raise IdxDimensionError(f"{path}: dimensions {dims} exceed {IDX_MAX_ELEMENTS} elements")
    payload = raw[header_end:]
    if len(payload) < total:
        raise IdxTruncatedError(f"{path}: payload has {len(payload)} bytes, expected {total}")
    return np.frombuffer(payload, dtype=np.uint8, count=total).reshape(dims)


def load_idx(path: str | Path, labels_path: str | Path | None = None, n_classes: int | None = None) -> Dataset:
    """Images flattened row-major and scaled to [0, 1].

    Without a label file every record gets label 0.
    """
    images = read_idx(path)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if labels_path is None:
        labels = np.zeros(features.shape[0], dtype=np.int64)
    else:
        labels = read_idx(labels_path).astype(np.int64)
        if labels.ndim != 1 or labels.size != features.shape[0]:
            raise IdxDimensionError("label file does not match image count")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, n_classes)
