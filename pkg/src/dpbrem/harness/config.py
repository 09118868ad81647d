"""Experiment configuration: YAML documents with environment overrides.

Every key has a default, so a config file only lists what it changes.
Environment variables ``DPBREM__<section>__<key>=<yaml scalar>`` override
file values, for example ``DPBREM__rule__sigma=0.1``.
"""

from __future__ import annotations

import copy
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..attacks import KINDS as ATTACK_KINDS
from ..attacks import PERTURBATIONS
from ..baselines import RULES
from ..data import PartitionSpec
from ..learner import KINDS as MODEL_KINDS
from ..secure_agg.field import MERSENNE61, is_prime

ENV_PREFIX = "DPBREM__"


class ConfigError(ValueError):
    """Validation failures; ``problems`` holds (key path, message) pairs."""

    def __init__(self, problems: list[tuple[str, str]]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{k}: {m}" for k, m in problems))


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    n_train: int = 12000
    n_test: int = 2000
    d_in: int = 50
    n_classes: int = 10
    separation: float = 3.0
    label_noise: float = 0.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class PartitionConfig:
    scheme: str = "shards"
    n_clients: int = 20
    shards_per_client: int = 4
    alpha: float = 0.5


@dataclass
class ModelConfig:
    kind: str = "logistic_regression"
    hidden: int = 0


@dataclass
class RuleConfig:
    kind: str = "dp_brem"
    T: int = 300
    q: float = 1.0
    p: float = 0.05
    beta: float = 0.9
    R: list[float] = field(default_factory=lambda: [10.0, 3.0])
    C: list[float] = field(default_factory=lambda: [1.0, 0.3])
    eta: list[float] = field(default_factory=lambda: [0.3, 0.03])
    sigma: float | None = 0.0
    target_epsilon: float | None = None
    tau: int | None = None
    range_bound: float = 10.0


@dataclass
class AttackBlock:
    kind: str = "none"
    byz_fraction: float = 0.0
    ipm_scale: float = 1.0
    alie_z_max: float | None = None
    mtb_gamma_max: float = 50.0
    mtb_perturbation: str = "inverse_unit"
    mtb_iterations: int = 20
    lf_scale: float = 1.0


@dataclass
class AccountantConfig:
    delta: float = 1e-6


@dataclass
class SecureConfig:
    enabled: bool = False
    threshold: int = 4
    prime: int = MERSENNE61
    frac_bits: int = 16
    uniform_bits: int = 16
    corrupt_clients: list[int] = field(default_factory=list)
    dropout_clients: list[int] = field(default_factory=list)
    transcript: bool = False


@dataclass
class TrackingConfig:
    agg_error: bool = False


@dataclass
class OutputConfig:
    dir: str = "runs/default"


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    rule: RuleConfig = field(default_factory=RuleConfig)
    attack: AttackBlock = field(default_factory=AttackBlock)
    accountant: AccountantConfig = field(default_factory=AccountantConfig)
    secure: SecureConfig = field(default_factory=SecureConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def partition_spec(self) -> PartitionSpec:
        p = self.partition
        return PartitionSpec(p.scheme, p.n_clients, p.shards_per_client, p.alpha)


# ---------------------------------------------------------------------------
# Building from documents
# ---------------------------------------------------------------------------


def _coerce(value: Any, annotation: Any, path: str, problems: list) -> Any:
    kind = str(annotation)
    if value is None:
        if "None" in kind:
            return None
        problems.append((path, "must not be null"))
        return None
    if kind.startswith("list"):
        if not isinstance(value, (list, tuple)):
            problems.append((path, "must be a list"))
            return value
        inner = "int" if "int" in kind else "float"
        return [_coerce(v, inner, f"{path}[{i}]", problems) for i, v in enumerate(value)]
    if kind == "bool":
        if not isinstance(value, bool):
            problems.append((path, "must be true or false"))
        return value
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append((path, "must be an integer"))
        return value
    if kind.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append((path, "must be a number"))
            return value
        return float(value)
    if kind.startswith("str"):
        if not isinstance(value, str):
            problems.append((path, "must be a string"))
        return value
    return value


def _build(cls: type, doc: Mapping[str, Any], prefix: str, problems: list) -> Any:
    if not isinstance(doc, Mapping):
        problems.append((prefix.rstrip(".") or "<root>", "must be a mapping"))
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in fields:
            problems.append((f"{prefix}{key}", "unknown key"))
    kwargs = {}
    for name, f in fields.items():
        if name not in doc:
            continue
        path = f"{prefix}{name}"
        if cls is ExperimentConfig and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], doc[name], path + ".", problems)
        else:
            kwargs[name] = _coerce(doc[name], f.type, path, problems)
    return cls(**kwargs)


_SECTIONS = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "rule": RuleConfig,
    "attack": AttackBlock,
    "accountant": AccountantConfig,
    "secure": SecureConfig,
    "tracking": TrackingConfig,
    "output": OutputConfig,
}


def set_path(doc: dict[str, Any], path: str, value: Any) -> None:
    """Assign ``value`` at a dotted key path, creating mappings as needed."""
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = node[k] = {}
        node = nxt
    node[keys[-1]] = value


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out: dict[str, Any] = {}
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            path = name[len(ENV_PREFIX):].replace("__", ".")
            set_path(out, path, yaml.safe_load(environ[name]))
    return out


def _merge(base: dict[str, Any], extra: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def from_dict(doc: Mapping[str, Any] | None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Build and validate; raises ConfigError listing every problem."""
    merged = _merge(dict(doc or {}), overrides or {})
    problems: list[tuple[str, str]] = []
    cfg = _build(ExperimentConfig, merged, "", problems)
    if not problems:
        problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return from_dict(doc, env_overrides(environ))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# Cross-field validation
# ---------------------------------------------------------------------------


def _pair(values: list[float], path: str, problems: list) -> None:
    if len(values) != 2:
        problems.append((path, "must be a [start, end] pair"))
    elif not all(math.isfinite(v) and v > 0 for v in values):
        problems.append((path, "schedule endpoints must be positive and finite"))


def validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    problems: list[tuple[str, str]] = []
    add = problems.append
    ds, part, model, rule = cfg.dataset, cfg.partition, cfg.model, cfg.rule
    atk, sec = cfg.attack, cfg.secure

    if cfg.seed < 0:
        add(("seed", "must be nonnegative"))

    if ds.kind not in ("synthetic", "idx"):
        add(("dataset.kind", "must be synthetic or idx"))
    elif ds.kind == "synthetic":
        for name in ("n_train", "n_test", "d_in"):
            if getattr(ds, name) < 1:
                add((f"dataset.{name}", "must be positive"))
        if ds.n_classes < 2:
            add(("dataset.n_classes", "need at least two classes"))
        if not ds.separation > 0:
            add(("dataset.separation", "must be positive"))
        if not 0 <= ds.label_noise < 1:
            add(("dataset.label_noise", "must lie in [0, 1)"))
        if ds.n_train < ds.n_classes:
            add(("dataset.n_train", "need at least one training record per class"))
    else:
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(ds, name):
                add((f"dataset.{name}", "required when dataset.kind is idx"))

    if part.scheme not in ("shards", "dirichlet", "uniform"):
        add(("partition.scheme", "must be shards, dirichlet or uniform"))
    if part.n_clients < 1:
        add(("partition.n_clients", "must be positive"))
    if part.shards_per_client < 1:
        add(("partition.shards_per_client", "must be positive"))
    if not part.alpha > 0:
        add(("partition.alpha", "must be positive"))
    if ds.kind == "synthetic" and part.n_clients > ds.n_train:
        add(("partition.n_clients", "more clients than training records"))

    if model.kind not in MODEL_KINDS:
        add(("model.kind", f"must be one of {', '.join(MODEL_KINDS)}"))
    elif model.kind == "mlp" and model.hidden < 1:
        add(("model.hidden", "mlp needs a positive hidden width"))

    if rule.kind not in RULES:
        add(("rule.kind", f"must be one of {', '.join(RULES)}"))
    if rule.T < 1:
        add(("rule.T", "must be positive"))
    if not 0 < rule.q <= 1:
        add(("rule.q", "must lie in (0, 1]"))
    if not 0 < rule.p <= 1:
        add(("rule.p", "must lie in (0, 1]"))
    if not 0 <= rule.beta < 1:
        add(("rule.beta", "must lie in [0, 1)"))
    for name in ("R", "C", "eta"):
        _pair(getattr(rule, name), f"rule.{name}", problems)
    if rule.sigma is None and rule.target_epsilon is None:
        add(("rule.sigma", "set sigma or rule.target_epsilon"))
    if rule.sigma is not None and rule.target_epsilon is not None:
        add(("rule.target_epsilon", "conflicts with an explicit rule.sigma; set sigma to null"))
    if rule.sigma is not None and not (math.isfinite(rule.sigma) and rule.sigma >= 0):
        add(("rule.sigma", "must be finite and nonnegative"))
    if rule.target_epsilon is not None and not rule.target_epsilon > 0:
        add(("rule.target_epsilon", "must be positive"))
    if rule.tau is not None and not 1 <= rule.tau <= part.n_clients:
        add(("rule.tau", "must lie in 1..partition.n_clients"))
    if not rule.range_bound > 0:
        add(("rule.range_bound", "must be positive"))

    if atk.kind not in ATTACK_KINDS:
        add(("attack.kind", f"must be one of {', '.join(ATTACK_KINDS)}"))
    if not 0 <= atk.byz_fraction < 0.5:
        add(("attack.byz_fraction", "must lie in [0, 0.5)"))
    if atk.kind == "none" and atk.byz_fraction > 0:
        add(("attack.byz_fraction", "byzantine clients need an attack kind"))
    if atk.mtb_perturbation not in PERTURBATIONS:
        add(("attack.mtb_perturbation", f"must be one of {', '.join(PERTURBATIONS)}"))
    if not atk.mtb_gamma_max > 0:
        add(("attack.mtb_gamma_max", "must be positive"))
    if atk.mtb_iterations < 1:
        add(("attack.mtb_iterations", "must be positive"))

    if not 0 < cfg.accountant.delta < 1:
        add(("accountant.delta", "must lie in (0, 1)"))

    if sec.enabled:
        if rule.kind != "dp_brem":
            add(("secure.enabled", "secure aggregation is only implemented for dp_brem"))
        if sec.threshold < 1:
            add(("secure.threshold", "must be positive"))
        if sec.prime < 3 or not is_prime(sec.prime):
            add(("secure.prime", "must be an odd prime"))
        elif sec.prime <= part.n_clients:
            add(("secure.prime", "must exceed the number of clients"))
        if not 1 <= sec.uniform_bits <= sec.frac_bits:
            add(("secure.uniform_bits", "must lie in 1..secure.frac_bits"))
        if not 0 < sec.frac_bits <= 24:
            add(("secure.frac_bits", "must lie in 1..24"))
        for name in ("corrupt_clients", "dropout_clients"):
            if any(not 0 <= i < part.n_clients for i in getattr(sec, name)):
                add((f"secure.{name}", "client ids must lie in 0..n_clients-1"))
        if set(sec.corrupt_clients) & set(sec.dropout_clients):
            add(("secure.dropout_clients", "overlaps secure.corrupt_clients"))
        slack = part.n_clients - sec.threshold + 1
        if 2 * len(set(sec.corrupt_clients)) + len(set(sec.dropout_clients)) >= slack:
            add(("secure.corrupt_clients", "corrupt and dropped clients exceed the decoding bound"))
    return problems
