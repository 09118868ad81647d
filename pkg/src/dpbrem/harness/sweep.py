"""Cartesian parameter sweeps over a base configuration.

Grid syntax: ``key.path=v1,v2;other.key=v3``. Values are YAML scalars, and a
list-valued key takes ``[a, b]`` items separated by ``|`` (for example
``rule.R=[10, 3]|[5, 1.5]``). Unless ``seed`` is itself a grid key, each
point runs under a seed derived from the base seed and the point's
assignment, so points are independent and reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .config import ConfigError, ExperimentConfig, from_dict, set_path
from .experiment import atomic_write, format_real, run_experiment

log = logging.getLogger("dpbrem.harness")

DEFAULT_MAX_POINTS = 256


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridPoint:
    index: int
    assignment: tuple[tuple[str, Any], ...]
    seed: int

    @property
    def name(self) -> str:
        return f"point_{self.index:04d}"


def parse_grid(spec: str) -> list[tuple[str, list[Any]]]:
    axes: list[tuple[str, list[Any]]] = []
    seen = set()
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise GridError(f"grid entry {part!r} lacks '='")
        key, raw = (s.strip() for s in part.split("=", 1))
        if not key or key in seen:
            raise GridError(f"grid key {key!r} is empty or repeated")
        seen.add(key)
        sep = "|" if raw.lstrip().startswith("[") else ","
        values = [yaml.safe_load(v.strip()) for v in raw.split(sep) if v.strip()]
        if not values:
            raise GridError(f"grid key {key!r} has no values")
        axes.append((key, values))
    if not axes:
        raise GridError("empty grid")
    return axes


def point_seed(base_seed: int, assignment: tuple[tuple[str, Any], ...]) -> int:
    text = json.dumps([base_seed, [[k, v] for k, v in assignment]], sort_keys=True)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big") >> 1


def expand(base: ExperimentConfig, axes: list[tuple[str, list[Any]]], max_points: int = DEFAULT_MAX_POINTS) -> list[GridPoint]:
    size = 1
    for _, values in axes:
        size *= len(values)
    if size > max_points:
        raise GridError(f"grid has {size} points, above the cap of {max_points}")
    keys = [k for k, _ in axes]
    points = []
    for i, combo in enumerate(itertools.product(*(v for _, v in axes))):
        assignment = tuple(zip(keys, combo))
        seed = dict(assignment)["seed"] if "seed" in keys else point_seed(base.seed, assignment)
        points.append(GridPoint(i, assignment, int(seed)))
    return points


def point_config(base: ExperimentConfig, point: GridPoint, out_root: Path) -> ExperimentConfig:
    doc = base.to_dict()
    for key, value in point.assignment:
        set_path(doc, key, value)
    doc["seed"] = point.seed
    doc["output"]["dir"] = str(out_root / point.name)
    return from_dict(doc)


def _run_point(cfg: ExperimentConfig) -> dict:
    return run_experiment(cfg).summary


def sweep(
    base: ExperimentConfig,
    grid: str,
    out_dir: str | Path | None = None,
    max_points: int = DEFAULT_MAX_POINTS,
    workers: int = 1,
) -> Path:
    """Run every grid point; returns the path of the index file."""
    out_root = Path(out_dir if out_dir is not None else base.output.dir)
    axes = parse_grid(grid)
    points = expand(base, axes, max_points)
    configs = []
    problems = []
    for p in points:
        try:
            configs.append(point_config(base, p, out_root))
        except ConfigError as exc:
            problems.extend((f"{p.name}.{k}", m) for k, m in exc.problems)
    if problems:
        raise ConfigError(problems)
    log.info("sweep: %d points into %s", len(points), out_root)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_point, configs))
    else:
        summaries = [_run_point(c) for c in configs]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    keys = [k for k, _ in axes]
    writer.writerow(["point", "seed", *keys, "final_accuracy", "metrics"])
    for p, s in zip(points, summaries):
        values = [json.dumps(v) if isinstance(v, (list, dict)) else v for _, v in p.assignment]
        writer.writerow([p.name, p.seed, *values, format_real(s["final_accuracy"]), f"{p.name}/metrics.csv"])
    index = out_root / "index.csv"
    atomic_write(index, buf.getvalue())
    return index
