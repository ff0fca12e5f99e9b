"""Forecasters for next-decision-window demand statistics.

Every forecaster is a scikit-learn style estimator: ``fit(series)`` then
``predict(series, starts)``, which returns an array of shape
``(n_macrocells, len(starts), 3)`` holding (min, avg, max) megabits for the
window ``[start, start + horizon)``. Apart from :class:`OracleForecaster`,
a prediction for ``start`` reads only slots ``< start``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .data import SLOTS_PER_DAY, DemandSeries
from .exceptions import HorizonError
from .mdp import DemandStats, window_stats


def _unpack(series) -> tuple[np.ndarray, int]:
    if isinstance(series, DemandSeries):
        return series.demand, series.first_slot
    demand = np.asarray(series, dtype=float)
    if demand.ndim == 1:
        demand = demand[None, :]
    return demand, 0


def _starts(starts) -> np.ndarray:
    return np.atleast_1d(np.asarray(starts, dtype=int))


def stats_of(windows: np.ndarray) -> np.ndarray:
    """(min, avg, max) along the last axis."""
    return np.stack([windows.min(axis=-1), windows.mean(axis=-1), windows.max(axis=-1)], axis=-1)


def order_clamp(pred: np.ndarray) -> np.ndarray:
    """Floor at zero and widen min/max around avg so min <= avg <= max."""
    pred = np.maximum(np.asarray(pred, dtype=float), 0.0)
    out = pred.copy()
    out[..., 0] = np.minimum(pred[..., 0], pred[..., 1])
    out[..., 2] = np.maximum(pred[..., 2], pred[..., 1])
    return out


def gather_windows(demand: np.ndarray, offsets: np.ndarray, length: int) -> np.ndarray:
    """``demand[:, o:o+length]`` for each offset -> (C, len(offsets), length)."""
    idx = offsets[:, None] + np.arange(length)[None, :]
    return demand[:, idx]


class BaseForecaster(BaseEstimator):
    """Shared window/horizon handling."""

    def __init__(self, window: int = 6, horizon: int = 6):
        self.window = window
        self.horizon = horizon

    def fit(self, series, y=None):
        self.n_macrocells_ = _unpack(series)[0].shape[0]
        return self

    def min_history(self) -> int:
        return self.window

    def predict(self, series, starts) -> np.ndarray:
        raise NotImplementedError

    def predict_stats(self, series, start: int, macrocell: int = 0) -> DemandStats:
        return DemandStats(*map(float, self.predict(series, [start])[macrocell, 0]))


class OracleForecaster(BaseForecaster):
    """Exact statistics of the true next window (backtest upper bound)."""

    def min_history(self) -> int:
        return 0

    def predict(self, series, starts) -> np.ndarray:
        check_is_fitted(self)
        demand, _ = _unpack(series)
        starts = _starts(starts)
        if np.any(starts < 0) or np.any(starts + self.horizon > demand.shape[1]):
            raise HorizonError("oracle needs the full next window inside the series")
        return stats_of(gather_windows(demand, starts, self.horizon))


class PersistenceForecaster(BaseForecaster):
    """Next window looks like the current observation window."""

    def predict(self, series, starts) -> np.ndarray:
        check_is_fitted(self)
        demand, _ = _unpack(series)
        starts = _starts(starts)
        if np.any(starts < self.window) or np.any(starts > demand.shape[1]):
            raise HorizonError(f"persistence needs {self.window} slots of history")
        return stats_of(gather_windows(demand, starts - self.window, self.window))


class SeasonalForecaster(BaseForecaster):
    """Statistics of the same window one period (default one day) earlier."""

    def __init__(self, window: int = 6, horizon: int = 6, period: int = SLOTS_PER_DAY):
        super().__init__(window=window, horizon=horizon)
        self.period = period

    def min_history(self) -> int:
        return self.period

    def predict(self, series, starts) -> np.ndarray:
        check_is_fitted(self)
        demand, _ = _unpack(series)
        starts = _starts(starts)
        if self.horizon > self.period:
            raise HorizonError("horizon longer than the seasonal period would read the future")
        if np.any(starts < self.period) or np.any(starts > demand.shape[1]):
            raise HorizonError(f"seasonal forecast needs {self.period} slots of history")
        return stats_of(gather_windows(demand, starts - self.period, self.horizon))


class RegressorForecaster(BaseForecaster):
    """Small dense network mapping the last ``window`` demands to next-window stats.

    Inputs are the observation window divided by ``scale`` (the macro
    capacity) plus a sin/cos encoding of the target slot-of-day. Trained by
    plain minibatch gradient descent on the mean squared error.
    """

    def __init__(self, window=6, horizon=6, hidden=(64, 64), scale=7500.0,
                 learning_rate=0.02, epochs=40, batch_size=64, seed=0):
        super().__init__(window=window, horizon=horizon)
        self.hidden = hidden
        self.scale = scale
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _features(self, demand, first_slot, starts):
        obs = gather_windows(demand, starts - self.window, self.window) / self.scale
        phase = 2 * np.pi * ((first_slot + starts) % SLOTS_PER_DAY) / SLOTS_PER_DAY
        clock = np.broadcast_to(
            np.stack([np.sin(phase), np.cos(phase)], axis=-1), obs.shape[:2] + (2,)
        )
        return np.concatenate([obs, clock], axis=-1)

    def fit(self, series, y=None):
        demand, first = _unpack(series)
        starts = np.arange(self.window, demand.shape[1] - self.horizon + 1)
        if starts.size == 0:
            raise HorizonError("training series is shorter than window + horizon")
        x = self._features(demand, first, starts).reshape(-1, self.window + 2)
        t = (stats_of(gather_windows(demand, starts, self.horizon)) / self.scale).reshape(-1, 3)

        widths = (self.window + 2, *self.hidden, 3)
        net = nn.init_weights(widths, self.seed)
        rng = np.random.default_rng(self.seed)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(x))
            total = 0.0
            for lo in range(0, len(x), self.batch_size):
                idx = order[lo:lo + self.batch_size]
                out = nn.forward(net, x[idx])
                err = out - t[idx]
                total += float(np.sum(err * err))
                grads = nn.backward(net, x[idx], 2.0 * err / (3 * len(idx)))
                nn.apply_update(net, grads, self.learning_rate)
            self.loss_curve_.append(total / (3 * len(x)))
        self.net_ = net
        self.n_macrocells_ = demand.shape[0]
        return self

    def predict(self, series, starts) -> np.ndarray:
        check_is_fitted(self, "net_")
        demand, first = _unpack(series)
        starts = _starts(starts)
        if np.any(starts < self.window) or np.any(starts > demand.shape[1]):
            raise HorizonError(f"regressor needs {self.window} slots of history")
        x = self._features(demand, first, starts)
        out = nn.forward(self.net_, x.reshape(-1, x.shape[-1])).reshape(x.shape[:2] + (3,))
        return order_clamp(out * self.scale)

    def save(self, directory) -> None:
        check_is_fitted(self, "net_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nn.save_weights(self.net_, directory / "forecaster.bin")
        params = self.get_params()
        params["hidden"] = list(params["hidden"])
        (directory / "forecaster.json").write_text(json.dumps(params, sort_keys=True, indent=2))

    @classmethod
    def load(cls, directory) -> "RegressorForecaster":
        directory = Path(directory)
        params = json.loads((directory / "forecaster.json").read_text())
        params["hidden"] = tuple(params["hidden"])
        model = cls(**params)
        model.net_ = nn.load_weights(directory / "forecaster.bin")
        model.n_macrocells_ = None
        return model


FORECASTERS = {
    "oracle": OracleForecaster,
    "persistence": PersistenceForecaster,
    "seasonal": SeasonalForecaster,
    "regressor": RegressorForecaster,
}


def make_forecaster(name: str, **kwargs) -> BaseForecaster:
    try:
        cls = FORECASTERS[name]
    except KeyError:
        raise ValueError(f"unknown forecaster {name!r}; choose from {sorted(FORECASTERS)}") from None
    return cls(**kwargs)


def oracle_forecast(next_window) -> DemandStats:
    return window_stats(next_window)


def persistence_forecast(current: DemandStats) -> DemandStats:
    return DemandStats(*current)


@dataclass
class ForecastErrorReport:
    """MAE/RMSE in megabits per statistic (min, avg, max)."""

    mae: np.ndarray
    rmse: np.ndarray
    mae_per_macrocell: np.ndarray
    rmse_per_macrocell: np.ndarray
    n_windows: int

    def as_dict(self) -> dict:
        names = ("min", "avg", "max")
        return {
            "n_windows": self.n_windows,
            "mae": dict(zip(names, map(float, self.mae))),
            "rmse": dict(zip(names, map(float, self.rmse))),
            "mae_per_macrocell": self.mae_per_macrocell.tolist(),
            "rmse_per_macrocell": self.rmse_per_macrocell.tolist(),
        }


def walk_forward_starts(n_slots: int, first: int, horizon: int) -> np.ndarray:
    return np.arange(first, n_slots - horizon + 1, horizon)


def backtest(model: BaseForecaster, series, start: int | None = None) -> ForecastErrorReport:
    """Walk-forward evaluation over consecutive decision windows.

    ``start`` defaults to the model's minimum history; the history before it
    (for instance a training split) is used only as context.
    """
    demand, _ = _unpack(series)
    first = model.min_history() if start is None else max(start, model.min_history())
    starts = walk_forward_starts(demand.shape[1], first, model.horizon)
    if starts.size < 1:
        raise HorizonError("series too short for a backtest window")
    pred = model.predict(series, starts)
    actual = stats_of(gather_windows(demand, starts, model.horizon))
    err = pred - actual
    return ForecastErrorReport(
        mae=np.abs(err).mean(axis=(0, 1)),
        rmse=np.sqrt((err ** 2).mean(axis=(0, 1))),
        mae_per_macrocell=np.abs(err).mean(axis=1),
        rmse_per_macrocell=np.sqrt((err ** 2).mean(axis=1)),
        n_windows=int(starts.size),
    )


def save_forecaster(model: BaseForecaster, directory) -> None:
    if isinstance(model, RegressorForecaster):
        model.save(directory)
        return
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = next(k for k, v in FORECASTERS.items() if type(model) is v)
    (directory / "forecaster.json").write_text(
        json.dumps({"name": name, **model.get_params()}, sort_keys=True, indent=2)
    )


def load_forecaster(directory) -> BaseForecaster:
    directory = Path(directory)
    if (directory / "forecaster.bin").exists():
        return RegressorForecaster.load(directory)
    params = json.loads((directory / "forecaster.json").read_text())
    model = make_forecaster(params.pop("name"), **params)
    return model.fit(np.zeros((1, 1)))


__all__ = [
    "BaseForecaster",
    "ForecastErrorReport",
    "OracleForecaster",
    "PersistenceForecaster",
    "RegressorForecaster",
    "SeasonalForecaster",
    "backtest",
    "load_forecaster",
    "make_forecaster",
    "oracle_forecast",
    "order_clamp",
    "persistence_forecast",
    "save_forecaster",
    "stats_of",
]
