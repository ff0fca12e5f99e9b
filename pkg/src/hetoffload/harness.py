"""Train and evaluate offloading schemes, and assemble the evaluation report."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .agents import SCHEMES, OffloadingPolicy, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import DemandSeries, read_demand_csv, synth_traffic, train_test_split
from .env import DecisionWindows
from .exceptions import ConfigError
from .forecast import make_forecaster
from .mdp import GROUP_LABELS, group_of

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CDF_STEP = 0.01


# --------------------------------------------------------------------------
# data and environments


def load_series(config: ExperimentConfig) -> DemandSeries:
    data = config.data
    if data.source == "csv":
        return read_demand_csv(data.demand_csv, t_r=config.layout.t_r,
                               data_size_per_activity=data.data_size_per_activity)
    s = data.synth
    return synth_traffic(
        seed=config.seed if s.seed is None else s.seed,
        n_macrocells=s.n_macrocells,
        n_days=s.n_days,
        base=s.base,
        amplitude=s.amplitude,
        noise_std=s.noise_std,
        overload_fraction=s.overload_fraction,
        scale_range=tuple(s.scale_range),
        overload_peak_rate=s.overload_peak_rate,
        macro_capacity=config.layout.macro.rate * config.layout.t_r,
        t_r=config.layout.t_r,
    )


def build_envs(config: ExperimentConfig, series: DemandSeries | None = None
               ) -> tuple[DecisionWindows, DecisionWindows]:
    """Training windows, and test windows whose observation history may
    reach back into the training split."""
    series = load_series(config) if series is None else series
    train, _ = train_test_split(series, config.data.train_ratio)
    common = dict(layout=config.cell_layout(), policy=config.distribution(),
                  reward_params=config.reward_params(), window=config.window,
                  horizon=config.horizon)
    try:
        train_env = DecisionWindows(train, **common)
        test_env = DecisionWindows(series, begin=train.n_slots, **common)
    except ValueError as exc:
        raise ConfigError(f"series too short for the configured windows: {exc}") from exc
    return train_env, test_env


def build_policy(config: ExperimentConfig, scheme: str) -> OffloadingPolicy:
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    k = config.layout.k_small
    if scheme in ("macro", "static"):
        return SCHEMES[scheme](k_small=k)
    if scheme == "ql":
        q = config.ql
        return SCHEMES[scheme](
            learning_rate=q.learning_rate, discount=q.discount, epsilon=q.epsilon, epochs=q.epochs,
            quant_step=q.quant_step, data_size=config.data.data_size_per_activity,
            max_bins=q.max_bins, seed=config.seed,
        )
    d = config.dqn
    kwargs = dict(
        hidden=tuple(d.hidden), learning_rate=d.learning_rate, discount=d.discount,
        epsilon=d.epsilon, target_sync=d.target_sync, replay_capacity=d.replay_capacity,
        batch_size=d.batch_size, train_every=d.train_every, epochs=d.epochs,
        reward_scale=d.reward_scale, seed=config.seed,
    )
    if scheme == "dqn-f":
        params = dict(config.forecaster.params)
        params.setdefault("window", config.window)
        params.setdefault("horizon", config.horizon)
        kwargs["forecaster"] = make_forecaster(config.forecaster.name, **params)
    return SCHEMES[scheme](**kwargs)


def _provenance(config: ExperimentConfig) -> dict:
    # the output location is not part of the experiment
    out = config.to_dict()
    out.pop("output_dir", None)
    return out


# --------------------------------------------------------------------------
# training


def run_training(config: ExperimentConfig, scheme: str, out_dir=None,
                 train_env: DecisionWindows | None = None) -> tuple[OffloadingPolicy, list]:
    """Fit one scheme on the training split; optionally write a checkpoint.

    Raises :class:`~hetoffload.exceptions.TrainingDivergenceError` when a
    gradient step produces a non-finite loss.
    """
    if train_env is None:
        train_env, _ = build_envs(config)
    policy = build_policy(config, scheme).fit(train_env)
    if out_dir is not None:
        save_checkpoint(policy, Path(out_dir), extra={"config": _provenance(config)})
    return policy, policy.training_log_


def checkpoint_dir(out_dir, scheme: str) -> Path:
    return Path(out_dir) / "checkpoints" / scheme


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    data_gb: float
    energy_j: float
    energy_mj: float
    ee_mb_per_j: float | None
    dropped_gb: float
    failure_fraction: float | None
    mean_active_small: float | None
    n_macrocells: int
    n_decisions: int

    @classmethod
    def from_arrays(cls, throughput, energy, dropped, actions, rho_offered, n_macrocells):
        n = int(np.size(actions))
        d = float(np.sum(throughput))
        e = float(np.sum(energy))
        return cls(
            data_gb=d / 1000.0,
            energy_j=e,
            energy_mj=e / 1e6,
            ee_mb_per_j=d / e if e > 0 else None,
            dropped_gb=float(np.sum(dropped)) / 1000.0,
            failure_fraction=float(np.mean(rho_offered > 1.0)) if n else None,
            mean_active_small=float(np.mean(actions)) if n else None,
            n_macrocells=int(n_macrocells),
            n_decisions=n,
        )


@dataclass
class SchemeResult:
    totals: Metrics
    groups: dict[str, Metrics]
    cdf: dict[str, list[float]]
    training_log: list = field(default_factory=list)


@dataclass
class Report:
    schema_version: int
    config: dict
    groups: dict[str, list[int]]
    demand_rate: list[float]
    cdf_grid: list[float]
    schemes: dict[str, SchemeResult]

    def to_dict(self) -> dict:
        def metrics(m: Metrics) -> dict:
            return dict(vars(m))

        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "groups": self.groups,
            "demand_rate": self.demand_rate,
            "cdf_grid": self.cdf_grid,
            "schemes": {
                name: {
                    "totals": metrics(r.totals),
                    "groups": {g: metrics(m) for g, m in r.groups.items()},
                    "cdf": r.cdf,
                    "training_log": r.training_log,
                }
                for name, r in self.schemes.items()
            },
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Report":
        if raw.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema {raw.get('schema_version')!r}")
        schemes = {
            name: SchemeResult(
                totals=Metrics(**r["totals"]),
                groups={g: Metrics(**m) for g, m in r["groups"].items()},
                cdf={g: list(v) for g, v in r["cdf"].items()},
                training_log=list(r.get("training_log", [])),
            )
            for name, r in raw["schemes"].items()
        }
        return cls(raw["schema_version"], raw["config"], raw["groups"], raw["demand_rate"],
                   raw["cdf_grid"], schemes)

    def __eq__(self, other):
        if not isinstance(other, Report):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def macrocell_groups(test_env: DecisionWindows) -> dict[str, list[int]]:
    """Group label -> macrocells whose mean test-split demand rate falls in it."""
    groups = {label: [] for label in GROUP_LABELS}
    for c, rate in enumerate(test_env.demand_rate):
        groups[GROUP_LABELS[group_of(float(rate))]].append(c)
    return groups


def ecdf(values: np.ndarray, grid: np.ndarray) -> list[float]:
    values = np.sort(np.ravel(values))
    if values.size == 0:
        return []
    return (np.searchsorted(values, grid, side="right") / values.size).tolist()


def cdf_grid_for(test_env: DecisionWindows) -> np.ndarray:
    """0.01-spaced grid up to the largest offered macro loading rate any
    action can produce (action 0), so every CDF reaches 1."""
    top = max(1.0, math.ceil(float(test_env.table.rho_m_offered.max()) / CDF_STEP) * CDF_STEP)
    n = int(round(top / CDF_STEP))
    return np.round(np.arange(n + 1) * CDF_STEP, 10)


def evaluate_policy(policy: OffloadingPolicy, test_env: DecisionWindows,
                    groups: Mapping[str, list[int]], grid: np.ndarray) -> SchemeResult:
    actions = np.asarray(policy.predict(test_env), dtype=int)
    picked = {name: test_env.pick(name, actions)
              for name in ("throughput", "energy", "dropped", "rho_m_offered")}

    def subset(cells):
        return Metrics.from_arrays(
            picked["throughput"][cells], picked["energy"][cells], picked["dropped"][cells],
            actions[cells], picked["rho_m_offered"][cells], len(cells),
        )

    every = list(range(test_env.n_macrocells))
    return SchemeResult(
        totals=subset(every),
        groups={label: subset(cells) for label, cells in groups.items()},
        cdf={label: ecdf(picked["rho_m_offered"][cells], grid) for label, cells in groups.items()},
        training_log=list(getattr(policy, "training_log_", [])),
    )


def run_evaluation(config: ExperimentConfig, policies: Mapping[str, OffloadingPolicy | str | Path],
                   test_env: DecisionWindows | None = None) -> Report:
    """Greedy (epsilon = 0) evaluation of each policy on the test split.

    ``policies`` maps scheme names to fitted policies or checkpoint
    directories.
    """
    if test_env is None:
        _, test_env = build_envs(config)
    groups = macrocell_groups(test_env)
    grid = cdf_grid_for(test_env)
    results = {}
    for scheme, policy in policies.items():
        if not isinstance(policy, OffloadingPolicy):
            policy, manifest = load_checkpoint(policy)
            if manifest["scheme"] != scheme:
                raise ConfigError(f"checkpoint holds scheme {manifest['scheme']!r}, expected {scheme!r}")
        if policy.k_small_ != test_env.layout.k_small:
            raise ConfigError(
                f"checkpoint trained with K={policy.k_small_} small BSs, config has K={test_env.layout.k_small}"
            )
        results[scheme] = evaluate_policy(policy, test_env, groups, grid)
    return Report(
        schema_version=REPORT_SCHEMA_VERSION,
        config=_provenance(config),
        groups=groups,
        demand_rate=[float(r) for r in test_env.demand_rate],
        cdf_grid=grid.tolist(),
        schemes=results,
    )


def run_experiment(config: ExperimentConfig, out_dir=None) -> Report:
    """Train every configured scheme, evaluate, and optionally emit files."""
    train_env, test_env = build_envs(config)
    policies = {}
    for scheme in config.schemes:
        ckpt = checkpoint_dir(out_dir, scheme) if out_dir is not None else None
        policies[scheme], _ = run_training(config, scheme, ckpt, train_env=train_env)
        logger.info("trained %s", scheme)
    report = run_evaluation(config, policies, test_env=test_env)
    if out_dir is not None:
        emit_report(report, out_dir)
    return report


# --------------------------------------------------------------------------
# report files

TOTALS_COLUMNS = ("scheme", "data_gb", "energy_j", "energy_mj", "ee_mb_per_j", "dropped_gb",
                  "failure_fraction", "mean_active_small", "n_macrocells", "n_decisions")
GROUP_COLUMNS = TOTALS_COLUMNS[:1] + ("group",) + TOTALS_COLUMNS[1:]


def _fmt(name: str, value) -> str:
    if value is None:
        return ""
    if name.endswith("_gb") or name == "energy_mj":
        return f"{value:.2f}"
    if name == "energy_j":
        return f"{value:.1f}"
    if isinstance(value, float):
        return f"{value:.6g}" if name != "ee_mb_per_j" else f"{value:.5f}"
    return str(value)


def emit_report(report: Report, out_dir) -> dict[str, Path]:
    """Write ``report.json`` plus ``totals.csv``, ``groups.csv`` and ``cdf.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("report.json", "totals.csv", "groups.csv", "cdf.csv")}
    paths["report.json"].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")

    with open(paths["totals.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOTALS_COLUMNS)
        for scheme, r in report.schemes.items():
            w.writerow([scheme] + [_fmt(c, getattr(r.totals, c)) for c in TOTALS_COLUMNS[1:]])

    with open(paths["groups.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUP_COLUMNS)
        for scheme, r in report.schemes.items():
            for label, m in r.groups.items():
                w.writerow([scheme, label] + [_fmt(c, getattr(m, c)) for c in GROUP_COLUMNS[2:]])

    with open(paths["cdf.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scheme", "group", "rho_m", "cdf"))
        for scheme, r in report.schemes.items():
            for label, values in r.cdf.items():
                for x, y in zip(report.cdf_grid, values):
                    w.writerow([scheme, label, f"{x:.2f}", repr(y)])
    return paths


def read_report(path) -> Report:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return Report.from_dict(json.loads(path.read_text()))


def format_summary(report: Report) -> str:
    """Plain-text totals table, one row per scheme."""
    header = f"{'scheme':<8}{'data (Gb)':>12}{'energy (MJ)':>13}{'EE (Mb/J)':>11}{'failed':>9}"
    lines = [header]
    for scheme, r in report.schemes.items():
        t = r.totals
        ee = f"{t.ee_mb_per_j:.4f}" if t.ee_mb_per_j is not None else "-"
        lines.append(f"{scheme:<8}{t.data_gb:>12.2f}{t.energy_mj:>13.2f}{ee:>11}{t.failure_fraction:>9.3f}")
    return "\n".join(lines)
