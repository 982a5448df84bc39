"""Experiment runner: named experiments bound to the acceptance checks.

Everything a run produces is a pure function of (config, seed): reports
carry no timestamps or entropy, so re-running an identical config yields
byte-identical CSV and JSON artifacts.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os
import time
from dataclasses import dataclass, field, asdict

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "ReportRow",
    "ConfigError",
    "run_experiment",
    "list_experiments",
    "emit_plot_data",
    "load_config",
]


class ConfigError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = None
    out_dir: str = "runs"
    drift: dict | None = None
    grid: dict = field(default_factory=dict)
    ensemble: int | None = None
    ladders: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not self.experiment:
            raise ConfigError("experiment: missing id")
        if self.seed is None:
            raise ConfigError("seed: required, no entropy defaults")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        for name, ladder in self.ladders.items():
            if not ladder:
                raise ConfigError(f"ladders.{name}: empty")
            if any(v <= 0 for v in ladder):
                raise ConfigError(f"ladders.{name}: entries must be positive")
            up = all(b > a for a, b in zip(ladder, ladder[1:]))
            down = all(b < a for a, b in zip(ladder, ladder[1:]))
            if not (up or down):
                raise ConfigError(f"ladders.{name}: must be sorted, got {ladder}")
        for key, v in self.grid.items():
            if key in ("L", "dt", "T") and v <= 0:
                raise ConfigError(f"grid.{key}: must be positive, got {v}")
            if key in ("n_x", "n_t") and (int(v) != v or v <= 0):
                raise ConfigError(f"grid.{key}: must be a positive integer, got {v}")
        if self.ensemble is not None and (int(self.ensemble) != self.ensemble or self.ensemble < 1):
            raise ConfigError(f"ensemble: must be a positive integer, got {self.ensemble}")
        return self

    def to_dict(self):
        return asdict(self)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(experiment=None, path=None, overrides=()):
    """Assemble a config: experiment defaults <- JSON file <- --set overrides."""
    from . import experiments as _exp

    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
    if experiment is None:
        experiment = data.get("experiment")
    if experiment is None:
        raise ConfigError("experiment: not given on the command line nor in the file")
    spec = _exp.get(experiment)
    merged = _deep_merge(spec.defaults, data)
    merged["experiment"] = experiment
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        node = merged
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not a table")
        node[parts[-1]] = _parse_value(raw)
    known = {"experiment", "seed", "out_dir", "drift", "grid", "ensemble", "ladders", "extra"}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**merged).validate()


@dataclass
class ReportRow:
    name: str
    params: dict
    measured: float
    expected: str
    tolerance: str
    passed: bool


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    rows: list
    series: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_time: float | None = None  # in-memory only, never serialized

    @property
    def all_pass(self):
        return all(r.passed for r in self.rows)

    def to_json(self) -> str:
        payload = {
            "experiment": self.experiment,
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "series": {k: [[float(a), float(b)] for a, b in v] for k, v in self.series.items()},
            "artifacts": list(self.artifacts),
            "all_pass": self.all_pass,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["experiment", "name", "params", "measured", "expected", "tolerance", "pass"])
        for r in self.rows:
            params = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(r.params.items()))
            writer.writerow(
                [self.experiment, r.name, params, _fmt(r.measured), r.expected,
                 r.tolerance, "pass" if r.passed else "FAIL"]
            )
        return buf.getvalue()

    def write(self, out_dir=None):
        base = out_dir or self.config.get("out_dir", "runs")
        folder = os.path.join(base, self.experiment)
        os.makedirs(folder, exist_ok=True)
        csv_path = os.path.join(folder, "report.csv")
        json_path = os.path.join(folder, "report.json")
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            fh.write(self.to_json())
        self.artifacts = [csv_path, json_path]
        return csv_path, json_path


def run_experiment(config: ExperimentConfig, write=True) -> ExperimentReport:
    """Execute the registered pipeline for config.experiment."""
    from . import experiments as _exp

    config.validate()
    spec = _exp.get(config.experiment)
    start = time.perf_counter()
    rows, series = spec.fn(config)
    report = ExperimentReport(
        experiment=config.experiment,
        config=config.to_dict(),
        rows=rows,
        series=series,
    )
    report.wall_time = time.perf_counter() - start
    if write:
        report.write()
    return report


def list_experiments():
    """(id, description, acceptance criterion) for every registered pipeline."""
    from . import experiments as _exp

    return [(s.id, s.description, s.criterion) for s in _exp.all_specs()]


def emit_plot_data(report, series, fileobj):
    """Two-column CSV of a named series, ready for external plotting."""
    if isinstance(report, (str, os.PathLike)):
        with open(report) as fh:
            payload = json.load(fh)
        series_map = payload.get("series", {})
    else:
        series_map = report.series
    if series not in series_map and series_map:
        known = ", ".join(sorted(series_map))
        raise ConfigError(f"unknown series {series!r}; report has: {known}")
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["x", "y"])
    for x, y in series_map.get(series, ()):
        writer.writerow([_fmt(float(x)), _fmt(float(y))])
