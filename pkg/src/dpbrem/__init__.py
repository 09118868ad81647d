"""Differentially private, Byzantine-robust federated learning simulator.

Subpackages: ``core`` (clipping, RNG streams), ``data``, ``learner``,
``accountant``, ``protocol`` (the client-momentum, centered-clipping rule),
``baselines``, ``attacks``, ``secure_agg`` and ``harness``.
"""

__version__ = "0.1.0"
