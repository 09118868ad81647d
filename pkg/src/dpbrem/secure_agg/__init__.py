"""Secret-shared noisy aggregation with verified inputs."""

from .backend import Channel, MpcBackend, SimulatedBackend
from .field import MERSENNE61, PrimeField, is_prime
from .fixed_point import FixedPointCodec, FixedPointOverflow, fxp_decode, fxp_encode
from .noisy_round import (
    BEHAVIORS,
    SecureAggregationError,
    SecureAggregator,
    SecureRoundResult,
    box_muller_shared,
    joint_uniform,
    secure_noisy_round,
    validate_input,
    validate_input_shared,
)
from .shamir import (
    DecodingError,
    Share,
    SharingConfig,
    gao_decode,
    reconstruct,
    reconstruct_vector,
    robust_reconstruct,
    robust_reconstruct_vector,
    share,
    share_vector,
)

__all__ = [
    "BEHAVIORS",
    "Channel",
    "DecodingError",
    "FixedPointCodec",
    "FixedPointOverflow",
    "MERSENNE61",
    "MpcBackend",
    "PrimeField",
    "SecureAggregationError",
    "SecureAggregator",
    "SecureRoundResult",
    "Share",
    "SharingConfig",
    "SimulatedBackend",
    "box_muller_shared",
    "fxp_decode",
    "fxp_encode",
    "gao_decode",
    "is_prime",
    "joint_uniform",
    "reconstruct",
    "reconstruct_vector",
    "robust_reconstruct",
    "robust_reconstruct_vector",
    "secure_noisy_round",
    "share",
    "share_vector",
    "validate_input",
    "validate_input_shared",
]
