"""One secure noisy-aggregation round with verified inputs.

Steps, as recorded in the transcript:

1. clients share their fixed-point input and a squared-norm witness
2. parties compute shares of the norm proof summary and the range bit
3. the server robustly opens the summaries and fixes the valid set
4. parties jointly generate shared uniforms from XORed random bits
5. the backend maps uniform pairs to Gaussian pairs (Box-Muller)
6. each party sums its shares of valid inputs and of the noise
7. the server robustly opens the noisy aggregate
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..core import RngStream, l2_norm
from .backend import Channel, MpcBackend, SimulatedBackend
from .fixed_point import FixedPointCodec
from .shamir import DecodingError, SharingConfig, reconstruct_vector, share_vector

log = logging.getLogger("dpbrem.secure")

BEHAVIORS = ("honest", "malformed", "corrupt_shares", "dropout")


class SecureAggregationError(RuntimeError):
    """The behaviour mix exceeds what robust reconstruction can absorb."""


def validate_input(z: np.ndarray, C: float) -> bool:
    """Closed ball test ||z|| <= C."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("input must be finite")
    return l2_norm(z) <= C


def norm_bound_raw(C: float, frac_bits: int) -> int:
    """C^2 at scale 2^(2f), rounded down."""
    return math.floor(C * C * float(1 << (2 * frac_bits)))


def squared_norm_raw(raw: np.ndarray) -> int:
    return sum(int(v) * int(v) for v in raw)


def validate_input_shared(
    z_shares: np.ndarray,
    witness_shares: np.ndarray,
    C: float,
    backend: MpcBackend,
    frac_bits: int = 16,
    channel: Channel | None = None,
) -> bool:
    """Shared-input check that sum z_k^2 equals the witness and the witness is <= C^2.

    The witness and the products live at scale 2^(2f). The verdict matches
    ``validate_input`` on the decoded vector except within 2^(2-f) * d of the
    boundary, where rounding of the input can flip it.
    """
    cfg = backend.cfg
    if z_shares.ndim != 2 or z_shares.shape[0] != cfg.n or witness_shares.shape != (cfg.n, 1):
        raise ValueError("malformed share set")
    summary, in_range = _proof_shares(z_shares, witness_shares, C, backend, frac_bits)
    opener = channel or getattr(backend, "channel", None)
    if opener is None:
        raise ValueError("need a channel to open the proof summary")
    return _verdict(opener, summary, in_range)


def _proof_shares(z_shares, witness_shares, C, backend, frac_bits):
    F = backend.cfg.field
    squares = backend.mul(z_shares, z_shares)
    total = F.sum(squares, axis=1)[:, None]
    summary = F.sub(total, witness_shares)
    in_range = backend.less_equal_const(witness_shares, norm_bound_raw(C, frac_bits))
    return summary, in_range


def _verdict(channel: Channel, summary: np.ndarray, in_range: np.ndarray) -> bool:
    return int(channel.open(summary)[0]) == 0 and int(channel.open(in_range)[0]) == 1


def joint_uniform(
    streams: Sequence[RngStream | None],
    uniform_bits: int,
    count: int,
    cfg: SharingConfig,
    backend: MpcBackend,
    frac_bits: int = 16,
    fixed: Mapping[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Shares of ``count`` uniforms on {k 2^-l}, built from XORed party bits.

    ``streams[j]`` is party j's randomness, or None when the party is absent.
    ``fixed`` overrides a party's bits, shape (l, count), to model adversarial
    contributions. Bit k (1-based) of the fraction carries weight 2^(f-k).
    """
    if not 1 <= uniform_bits <= frac_bits:
        raise ValueError("need 1 <= uniform_bits <= frac_bits")
    F = cfg.field
    fixed = fixed or {}
    acc = None
    for j, stream in enumerate(streams):
        if stream is None:
            continue
        if j in fixed:
            bits = np.asarray(fixed[j], dtype=np.uint64).reshape(uniform_bits, count)
        else:
            bits = stream.derive("bits").generator().integers(0, 2, size=(uniform_bits, count), dtype=np.uint64)
        shared = share_vector(bits.ravel(), cfg, stream.derive("share_bits"))
        acc = shared if acc is None else backend.xor(acc, shared)
    if acc is None:
        raise SecureAggregationError("no party contributed randomness")
    acc = acc.reshape(cfg.n, uniform_bits, count)
    out = np.zeros((cfg.n, count), dtype=np.uint64)
    for k in range(uniform_bits):
        out = F.add(out, F.scale(1 << (frac_bits - k - 1), acc[:, k, :]))
    return out


def box_muller_shared(
    u_shares: np.ndarray,
    v_shares: np.ndarray,
    scale: float,
    backend: MpcBackend,
    frac_bits: int = 16,
    uniform_bits: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    return backend.box_muller(u_shares, v_shares, scale, frac_bits, uniform_bits)


@dataclass
class SecureRoundResult:
    aggregate: np.ndarray
    aggregate_raw: np.ndarray
    valid: tuple[int, ...]
    noise_raw: np.ndarray
    inputs_raw: dict[int, np.ndarray]
    transcript: list[dict] = field(default_factory=list)
    frac_bits: int = 16

    @property
    def noise(self) -> np.ndarray:
        return self.noise_raw.astype(np.float64) / float(1 << self.frac_bits)


def secure_noisy_round(
    inputs: Mapping[int, np.ndarray],
    behaviors: Mapping[int, str],
    C: float,
    noise_scale: float,
    cfg: SharingConfig,
    stream: RngStream,
    backend: MpcBackend | None = None,
    frac_bits: int = 16,
    uniform_bits: int = 16,
    transcript: bool = False,
    zero_noise: bool = False,
) -> SecureRoundResult:
    """Noisy sum of the inputs that pass the norm check.

    Parties are 0..n-1 and ``inputs`` is keyed by party. Behaviours:

    * ``malformed``: shares its input but claims a witness no larger than C^2
    * ``corrupt_shares``: every share it hands to a reconstruction is garbage
    * ``dropout``: offline for the round; contributes no input, bits or shares
    """
    for j, b in behaviors.items():
        if b not in BEHAVIORS:
            raise ValueError(f"unknown behaviour {b!r} for party {j}")
        if not 0 <= j < cfg.n:
            raise ValueError(f"party {j} outside 0..{cfg.n - 1}")
    corrupt = frozenset(j for j, b in behaviors.items() if b == "corrupt_shares")
    dropped = frozenset(j for j, b in behaviors.items() if b == "dropout")
    if not cfg.tolerates(len(corrupt), len(dropped)):
        raise SecureAggregationError(
            f"{len(corrupt)} corrupt and {len(dropped)} dropped parties exceed the decoding bound for n={cfg.n}, t={cfg.t}"
        )
    d = {np.shape(z) for z in inputs.values()}
    if len(d) > 1:
        raise ValueError("inputs differ in length")
    dim = d.pop()[0] if d else 0
    channel = Channel(cfg, stream.derive("channel"), corrupt, dropped)
    backend = backend or SimulatedBackend(cfg, stream.derive("backend"), channel)
    F = cfg.field
    codec = FixedPointCodec(frac_bits, cfg.P, cfg.n + 1)
    lines: list[dict] = []

    def emit(step: int, name: str, **info) -> None:
        line = {"step": step, "name": name, **info}
        lines.append(line)
        if transcript:
            log.info(json.dumps(line, sort_keys=True))

    try:
        # 1: input and witness sharing
        bound = norm_bound_raw(C, frac_bits)
        submitted: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        raws: dict[int, np.ndarray] = {}
        for i in sorted(inputs):
            if behaviors.get(i, "honest") == "dropout":
                continue
            raw = codec.raw(inputs[i])
            witness = squared_norm_raw(raw)
            if behaviors.get(i) == "malformed":
                witness = min(witness, bound)
            cs = stream.derive(f"client/{i}")
            submitted[i] = (
                share_vector(F.array(raw), cfg, cs.derive("input")),
                share_vector(np.array([witness % cfg.P], dtype=np.uint64), cfg, cs.derive("witness")),
            )
            raws[i] = raw
        emit(1, "share_inputs", clients=sorted(submitted), dropped=sorted(dropped))

        # 2: proof summaries on shares
        proofs = {i: _proof_shares(zs, ws, C, backend, frac_bits) for i, (zs, ws) in submitted.items()}
        emit(2, "proof_summaries", clients=sorted(proofs))

        # 3: robust opening of the summaries
        valid = tuple(i for i in sorted(proofs) if _verdict(channel, *proofs[i]))
        emit(3, "validate", valid=list(valid), rejected=sorted(set(proofs) - set(valid)))

        # 4: joint uniforms
        pairs = (dim + 1) // 2
        streams = [None if j in dropped else stream.derive(f"party/{j}") for j in range(cfg.n)]
        u = joint_uniform([s and s.derive("u") for s in streams], uniform_bits, pairs, cfg, backend, frac_bits)
        v = joint_uniform([s and s.derive("v") for s in streams], uniform_bits, pairs, cfg, backend, frac_bits)
        emit(4, "joint_uniform", pairs=pairs, bits=uniform_bits)

        # 5: Gaussian pairs; an odd dimension drops the final b
        if zero_noise or noise_scale == 0:
            xi = np.zeros((cfg.n, dim), dtype=np.uint64)
        else:
            a, b = box_muller_shared(u, v, noise_scale, backend, frac_bits, uniform_bits)
            xi = np.concatenate([a, b], axis=1)[:, :dim]
        emit(5, "box_muller", scale=noise_scale, dimension=dim)

        # 6: local aggregation of shares
        agg = xi.copy()
        for i in valid:
            agg = F.add(agg, submitted[i][0])
        emit(6, "aggregate_shares", summands=len(valid) + 1)

        # 7: robust opening of the noisy aggregate
        opened = channel.open(agg)
        emit(7, "reconstruct", corrupt=sorted(corrupt), erased=sorted(dropped))
    except DecodingError as exc:
        raise SecureAggregationError(str(exc)) from exc

    # audit-only view of the noise, opened from honest shares
    noise_raw = F.to_signed(reconstruct_vector(xi, list(range(1, cfg.n + 1)), cfg)) if dim else np.zeros(0, np.int64)
    aggregate_raw = F.to_signed(opened)
    result = SecureRoundResult(
        aggregate=aggregate_raw.astype(np.float64) / float(1 << frac_bits),
        aggregate_raw=aggregate_raw,
        valid=valid,
        noise_raw=noise_raw,
        inputs_raw=raws,
        transcript=lines,
        frac_bits=frac_bits,
    )
    return result


class SecureAggregator:
    """Adapter used by the DP-BREM rule to compute its noisy sum in shares.

    The clients submitting in a round act as the share-holding parties, in
    ascending id order. Inputs are clipped slightly inside C so rounding to
    fixed point can never push an honest input over the validation bound.
    """

    def __init__(
        self,
        threshold: int,
        P: int,
        frac_bits: int = 16,
        uniform_bits: int = 16,
        corrupt_clients: Sequence[int] = (),
        dropout_clients: Sequence[int] = (),
        transcript: bool = False,
    ) -> None:
        if threshold < 1:
            raise ValueError("threshold must be at least 1")
        if set(corrupt_clients) & set(dropout_clients):
            raise ValueError("a client cannot both corrupt shares and drop out")
        self.threshold = threshold
        self.P = P
        self.frac_bits = frac_bits
        self.uniform_bits = uniform_bits
        self.corrupt_clients = frozenset(corrupt_clients)
        self.dropout_clients = frozenset(dropout_clients)
        self.transcript = transcript
        self.last: SecureRoundResult | None = None

    def noisy_sum(
        self, clipped: Mapping[int, np.ndarray], C: float, noise_scale: float, stream: RngStream
    ) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
        """(noisy sum, noise, ids of the clients whose inputs were summed)."""
        ids = sorted(clipped)
        cfg = SharingConfig(len(ids), min(self.threshold, len(ids)), self.P)
        d = clipped[ids[0]].size
        inner = max(C - math.sqrt(d) * 2.0 ** -self.frac_bits, 0.0)
        inputs, behaviors = {}, {}
        for j, i in enumerate(ids):
            z = clipped[i]
            norm = l2_norm(z)
            inputs[j] = z * (inner / norm) if norm > inner else z
            if i in self.corrupt_clients:
                behaviors[j] = "corrupt_shares"
            elif i in self.dropout_clients:
                behaviors[j] = "dropout"
        res = secure_noisy_round(
            inputs, behaviors, C, noise_scale, cfg, stream,
            frac_bits=self.frac_bits, uniform_bits=self.uniform_bits, transcript=self.transcript,
        )
        self.last = res
        return res.aggregate, res.noise, tuple(ids[j] for j in res.valid)
