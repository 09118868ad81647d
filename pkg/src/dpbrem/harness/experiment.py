"""Run one configured experiment and write its metrics and summary."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from ..accountant import calibrate_sigma, gdp_mu_rounds, solve_epsilon
from ..attacks import Adversary, AttackConfig, byzantine_count, choose_byzantine
from ..baselines import make_rule
from ..core import RngStream
from ..data import Dataset, gen_synthetic, load_idx, partition, split
from ..learner import ModelSpec, accuracy, init_model, loss
from ..protocol import AggregationRule, ClientState, init_server, run_round, schedule
from ..secure_agg import SecureAggregator
from .config import ExperimentConfig, dump_config

log = logging.getLogger("dpbrem.harness")

METRICS_HEADER = (
    "round",
    "test_accuracy",
    "train_loss",
    "epsilon_spent",
    "clip_fraction_record",
    "clip_fraction_client",
    "agg_error_sq",
)


@dataclass
class RunResult:
    rows: list[dict]
    summary: dict
    metrics_path: Path | None
    summary_path: Path | None


def format_real(x: float) -> str:
    """Shortest round-tripping decimal; inf for unbounded values."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv(rows: list[dict]) -> str:
    lines = [",".join(METRICS_HEADER)]
    for r in rows:
        cells = [str(r["round"])]
        for key in METRICS_HEADER[1:]:
            v = r.get(key)
            cells.append("" if v is None else format_real(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def final_window_start(T: int) -> int:
    return math.ceil(0.9 * T)


def final_accuracy(rows: list[dict], T: int) -> float:
    start = final_window_start(T)
    window = [r["test_accuracy"] for r in rows if r["round"] >= start]
    return math.fsum(window) / len(window)


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


def load_data(cfg: ExperimentConfig, stream: RngStream) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        full = gen_synthetic(stream, ds.n_train + ds.n_test, ds.d_in, ds.n_classes, ds.separation, ds.label_noise)
        return split(full, ds.n_train)
    train = load_idx(ds.train_images, ds.train_labels)
    test = load_idx(ds.test_images, ds.test_labels, n_classes=train.n_classes)
    return train, test


class RunningAccountant:
    """Per-round epsilon, the maximum over clients of their composed GDP guarantee."""

    def __init__(
        self,
        rule: AggregationRule,
        cfg: ExperimentConfig,
        client_sizes: list[int],
        d: int,
    ) -> None:
        r = cfg.rule
        self.rule = rule
        self.delta = cfg.accountant.delta
        self.q = rule.accounting_q(r.q)
        self.p = r.p
        T = r.T
        R = schedule(r.R[0], r.R[1], T)
        C = schedule(r.C[0], r.C[1], T)
        # per distinct dataset size, sigma_i / sigma for every round
        self.factors = {
            n: [rule.sigma_factor(float(R[t]), float(C[t]), r.p, n, d) for t in range(T)]
            for n in sorted(set(client_sizes))
        }

    def client_mu(self, sigma: float, rounds: int, n_i: int) -> float:
        factors = self.factors[n_i][:rounds]
        if rounds == 0:
            return 0.0
        if not self.rule.is_private(sigma) or any(math.isinf(f) for f in factors):
            return math.inf
        return gdp_mu_rounds(self.q, self.p, [sigma * f for f in factors])

    def mu(self, sigma: float, rounds: int) -> float:
        return max(self.client_mu(sigma, rounds, n_i) for n_i in self.factors)

    def epsilon(self, sigma: float, rounds: int) -> float:
        return solve_epsilon(self.mu(sigma, rounds), self.delta)

    def calibrate(self, target: float, rounds: int) -> float:
        return calibrate_sigma(target, self.delta, lambda s: self.epsilon(s, rounds))


def privacy_report(cfg: ExperimentConfig) -> dict:
    """Noise multiplier and per-client guarantees without running training."""
    root = RngStream.from_seed(cfg.seed)
    train, _ = load_data(cfg, root.derive("data"))
    clients_data = partition(train, cfg.partition_spec(), root.derive("partition"))
    spec = ModelSpec(cfg.model.kind, train.d_in, train.n_classes, cfg.model.hidden)
    r = cfg.rule
    n_byz = byzantine_count(len(clients_data), cfg.attack.byz_fraction) if cfg.attack.kind != "none" else 0
    tau = r.tau if r.tau is not None else max(len(clients_data) - n_byz, 1)
    rule = make_rule(r.kind, 0.0, tau, r.range_bound)
    acc = RunningAccountant(rule, cfg, [len(d) for d in clients_data], spec.n_params)
    sigma = r.sigma if r.sigma is not None else acc.calibrate(r.target_epsilon, r.T)
    clients = []
    for n_i, factors in acc.factors.items():
        mu = acc.client_mu(sigma, r.T, n_i)
        clients.append(
            {
                "n_i": n_i,
                "sigma_i_first_round": sigma * factors[0],
                "mu": mu,
                "epsilon": solve_epsilon(mu, acc.delta),
            }
        )
    return {
        "rule": r.kind,
        "sigma": sigma,
        "q_accounted": acc.q,
        "p": r.p,
        "T": r.T,
        "delta": acc.delta,
        "epsilon": acc.epsilon(sigma, r.T),
        "clients": clients,
    }


def _schedule_arg(pair: list[float]) -> tuple[float, float]:
    return float(pair[0]), float(pair[1])


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, write: bool = True) -> RunResult:
    """Execute T rounds; metrics and summary are a pure function of the config."""
    root = RngStream.from_seed(cfg.seed)
    train, test = load_data(cfg, root.derive("data"))
    clients_data = partition(train, cfg.partition_spec(), root.derive("partition"))
    spec = ModelSpec(cfg.model.kind, train.d_in, train.n_classes, cfg.model.hidden)
    r = cfg.rule
    n = len(clients_data)
    track = cfg.tracking.agg_error
    clients = [ClientState(i, d, r.p, r.beta, track_raw=track) for i, d in enumerate(clients_data)]

    a = cfg.attack
    n_byz = byzantine_count(n, a.byz_fraction) if a.kind != "none" else 0
    byzantine = choose_byzantine(n, a.byz_fraction, root.derive("byzantine")) if n_byz else ()
    adversary = None
    if byzantine:
        adversary = Adversary(
            AttackConfig(
                a.kind, a.byz_fraction, a.ipm_scale, a.alie_z_max, a.mtb_gamma_max,
                a.mtb_perturbation, a.mtb_iterations, a.lf_scale,
            ),
            byzantine,
        )

    secure = None
    if cfg.secure.enabled:
        s = cfg.secure
        secure = SecureAggregator(
            s.threshold, s.prime, s.frac_bits, s.uniform_bits, s.corrupt_clients, s.dropout_clients, s.transcript
        )
    tau = r.tau if r.tau is not None else max(n - n_byz, 1)

    # the rule only supplies sigma_factor here, so any sigma works
    probe = make_rule(r.kind, 0.0, tau, r.range_bound)
    accountant = RunningAccountant(probe, cfg, [len(d) for d in clients_data], spec.n_params)
    sigma = r.sigma if r.sigma is not None else accountant.calibrate(r.target_epsilon, r.T)
    rule = make_rule(r.kind, sigma, tau, r.range_bound, secure)

    theta0 = init_model(spec, root.derive("init"))
    server = init_server(theta0, r.T, _schedule_arg(r.R), _schedule_arg(r.C), _schedule_arg(r.eta), sigma, r.q)
    log.info("run: rule=%s sigma=%r clients=%d byzantine=%s", r.kind, sigma, n, list(byzantine))

    rounds_stream = root.derive("rounds")
    rows: list[dict] = []
    for t in range(1, r.T + 1):
        server, out = run_round(server, clients, adversary, rounds_stream, rule, spec)
        diag = out.diagnostics
        rows.append(
            {
                "round": t,
                "test_accuracy": accuracy(server.theta, test, spec),
                "train_loss": loss(server.theta, train, spec),
                "epsilon_spent": accountant.epsilon(sigma, t),
                "clip_fraction_record": diag.get("clip_fraction_record", 0.0),
                "clip_fraction_client": diag.get("clip_fraction_client", 0.0),
                "agg_error_sq": diag.get("agg_error_sq") if track else None,
            }
        )
        if t % 50 == 0 or t == r.T:
            log.info("round %d: accuracy=%.4f loss=%.4f", t, rows[-1]["test_accuracy"], rows[-1]["train_loss"])

    summary = {
        "final_accuracy": final_accuracy(rows, r.T),
        "final_window": [final_window_start(r.T), r.T],
        "rounds": r.T,
        "sigma": sigma,
        "epsilon": rows[-1]["epsilon_spent"],
        "delta": cfg.accountant.delta,
        "byzantine_clients": list(byzantine),
        "rule": r.kind,
        "attack": a.kind,
        "seed": cfg.seed,
    }
    if track:
        errs = [row["agg_error_sq"] for row in rows if row["agg_error_sq"] is not None]
        summary["mean_agg_error_sq"] = math.fsum(errs) / len(errs) if errs else None

    metrics_path = summary_path = None
    if write:
        out = Path(out_dir if out_dir is not None else cfg.output.dir)
        metrics_path = out / "metrics.csv"
        summary_path = out / "summary.json"
        atomic_write(metrics_path, metrics_csv(rows))
        atomic_write(summary_path, json.dumps(jsonable(summary), indent=2, sort_keys=True) + "\n")
        atomic_write(out / "config.yaml", dump_config(cfg))
    return RunResult(rows, summary, metrics_path, summary_path)


def jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [jsonable(v) for v in x]
    return x
