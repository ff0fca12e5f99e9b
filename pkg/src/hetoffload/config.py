"""Experiment configuration: nested dataclasses loaded from YAML.

Every field has a default, so an empty file (or no file) describes the
bundled synthetic experiment. Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .agents import SCHEMES
from .exceptions import ConfigError
from .forecast import FORECASTERS
from .hetnet import BSPowerProfile, CellLayout, DistributionPolicy
from .mdp import RewardParams, RewardVariant

CONFIG_VERSION = 1


@dataclass
class SynthConfig:
    n_macrocells: int = 20
    n_days: int = 30
    base: float = 6000.0
    amplitude: float = 4000.0
    noise_std: float = 100.0
    overload_fraction: float = 0.3
    scale_range: tuple[float, float] = (0.1, 2.0)
    overload_peak_rate: float = 4.0
    seed: int | None = None  # None: use the experiment seed


@dataclass
class DataConfig:
    source: str = "synth"  # "synth" or "csv"
    demand_csv: str | None = None
    data_size_per_activity: float = 15.0
    train_ratio: float = 0.9
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class ProfileConfig:
    p_cst: float
    p_tx: float
    alpha: float
    rate: float


@dataclass
class LayoutConfig:
    k_small: int = 10
    t_r: float = 600.0
    macro: ProfileConfig = field(default_factory=lambda: ProfileConfig(130.0, 20.0, 4.7, 12.5))
    small: ProfileConfig = field(default_factory=lambda: ProfileConfig(4.8, 1.0, 8.0, 27.0))
    distribution: str = DistributionPolicy.SMALL_FIRST.value


@dataclass
class RewardConfig:
    beta: float = 100.0
    gamma: float = 1.0
    rho_th1: float = 0.7
    rho_th2: float = 0.5
    w1: float = 10.0
    w2: float = 10.0
    w3: float = 10.0
    w4: float = 10.0
    active_only: bool = True
    variant: str = RewardVariant.LITERAL.value


@dataclass
class QlConfig:
    learning_rate: float = 0.1
    discount: float = 0.9
    epsilon: float = 0.1
    epochs: int = 10
    quant_step: float = 20.0
    max_bins: int = 200


@dataclass
class DqnConfig:
    hidden: tuple[int, ...] = (512, 512)
    learning_rate: float = 0.001
    discount: float = 0.9
    epsilon: float = 0.1
    target_sync: int = 200
    replay_capacity: int = 10_000
    batch_size: int = 32
    train_every: int = 4
    epochs: int = 10
    reward_scale: float = 0.01


@dataclass
class ForecasterConfig:
    name: str = "oracle"
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    seed: int = 0
    window: int = 6
    horizon: int = 6
    schemes: tuple[str, ...] = ("macro", "static", "ql", "dqn", "dqn-f")
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ql: QlConfig = field(default_factory=QlConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)

    # derived objects ----------------------------------------------------
    def cell_layout(self) -> CellLayout:
        lay = self.layout
        return CellLayout(
            macro_profile=BSPowerProfile(**dataclasses.asdict(lay.macro)),
            small_profile=BSPowerProfile(**dataclasses.asdict(lay.small)),
            k_small=lay.k_small,
            t_r=lay.t_r,
        )

    def reward_params(self) -> RewardParams:
        return RewardParams(**dataclasses.asdict(self.reward))

    def distribution(self) -> DistributionPolicy:
        return DistributionPolicy(self.layout.distribution)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["version"] = CONFIG_VERSION
        return _plain(out)

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`ConfigError` on the first invalid field."""
        try:
            self.cell_layout()
            self.reward_params()
            self.distribution()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        try:
            checks = self._checks()
        except TypeError as exc:
            raise ConfigError(f"wrong value type in config: {exc}") from exc
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def _checks(self) -> list[tuple[bool, str]]:
        return [
            (self.window >= 1 and self.horizon >= 1, "window and horizon must be >= 1"),
            (0 < self.data.train_ratio < 1, "data.train_ratio must lie in (0, 1)"),
            (self.data.data_size_per_activity > 0, "data.data_size_per_activity must be > 0"),
            (self.data.source in ("synth", "csv"), f"data.source must be synth or csv, got {self.data.source!r}"),
            (self.data.source != "csv" or bool(self.data.demand_csv), "data.demand_csv is required for csv source"),
            (self.data.synth.n_macrocells >= 1 and self.data.synth.n_days >= 1, "synth sizes must be >= 1"),
            (len(self.data.synth.scale_range) == 2 and 0 <= self.data.synth.scale_range[0] <= self.data.synth.scale_range[1],
             "synth.scale_range must be [low, high] with 0 <= low <= high"),
            (0 <= self.data.synth.overload_fraction <= 1, "synth.overload_fraction must lie in [0, 1]"),
            (all(s in SCHEMES for s in self.schemes) and len(self.schemes) > 0,
             f"schemes must be a non-empty subset of {sorted(SCHEMES)}"),
            (self.forecaster.name in FORECASTERS, f"forecaster.name must be one of {sorted(FORECASTERS)}"),
            (self.ql.epochs >= 1 and self.dqn.epochs >= 1, "epochs must be >= 1"),
            (0 <= self.ql.epsilon <= 1 and 0 <= self.dqn.epsilon <= 1, "epsilon must lie in [0, 1]"),
            (0 <= self.ql.discount < 1 and 0 <= self.dqn.discount < 1, "discount must lie in [0, 1)"),
            (self.ql.learning_rate > 0 and self.dqn.learning_rate > 0, "learning rates must be > 0"),
            (self.dqn.batch_size >= 1 and self.dqn.replay_capacity >= self.dqn.batch_size,
             "dqn.replay_capacity must be >= dqn.batch_size >= 1"),
            (self.dqn.target_sync >= 1 and self.dqn.train_every >= 1, "dqn.target_sync and dqn.train_every must be >= 1"),
            (len(self.dqn.hidden) >= 1 and min(self.dqn.hidden) >= 1, "dqn.hidden must list positive widths"),
            (self.dqn.reward_scale > 0, "dqn.reward_scale must be > 0"),
        ]


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, raw: Mapping[str, Any], path: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields) - {"version"})
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        if name == "version":
            continue
        f = fields[name]
        sub = f"{path}.{name}" if path else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{sub} must be a mapping")
            kwargs[name] = _build(type(default), {**dataclasses.asdict(default), **value}, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub} must be a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(raw: Mapping[str, Any] | None) -> ExperimentConfig:
    raw = dict(raw or {})
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    return _build(ExperimentConfig, raw, "").validate()


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def with_overrides(config: ExperimentConfig, changes: Mapping[str, Any]) -> ExperimentConfig:
    """Copy of ``config`` with dotted-path overrides, e.g. ``{"dqn.epochs": 3}``."""
    raw = config.to_dict()
    for dotted, value in changes.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.get(key)
            if not isinstance(node, dict):
                raise ConfigError(f"unknown config section in {dotted!r}")
        node[leaf] = value
    return config_from_dict(raw)
