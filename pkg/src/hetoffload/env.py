"""Decision-window view of a demand series.

Demand is exogenous (actions never change future traffic), so the outcome of
every action in every window can be tabulated once and shared by all
schemes. Decision ``j`` of macrocell ``c`` holds its action over slots
``[starts[j], starts[j] + horizon)`` and observes ``[starts[j] - window, starts[j])``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import DemandSeries
from .forecast import gather_windows, stats_of
from .hetnet import CellLayout, DistributionPolicy
from .mdp import ActionTable, RewardParams, evaluate_actions


def decision_starts(n_slots: int, window: int, horizon: int, begin: int = 0) -> np.ndarray:
    """Window starts on the ``horizon`` grid anchored at ``begin``, each with
    ``window`` slots of history and a complete decision window."""
    first = begin
    while first < window:
        first += horizon
    return np.arange(first, n_slots - horizon + 1, horizon)


@dataclass
class DecisionWindows:
    series: DemandSeries
    layout: CellLayout
    policy: DistributionPolicy
    reward_params: RewardParams
    window: int = 6
    horizon: int = 6
    begin: int = 0

    def __post_init__(self):
        self.policy = DistributionPolicy(self.policy)
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be >= 1")
        self.starts = decision_starts(self.series.n_slots, self.window, self.horizon, self.begin)
        if self.starts.size == 0:
            raise ValueError("series too short for a single decision window")

    @property
    def n_macrocells(self) -> int:
        return self.series.n_macrocells

    @property
    def n_decisions(self) -> int:
        return int(self.starts.size)

    @property
    def capacity(self) -> float:
        return self.layout.macro_capacity

    @cached_property
    def observed(self) -> np.ndarray:
        """Stats of each observation window, (C, J, 3) megabits."""
        return stats_of(gather_windows(self.series.demand, self.starts - self.window, self.window))

    @cached_property
    def upcoming(self) -> np.ndarray:
        """Stats of each decision window, (C, J, 3) megabits."""
        return stats_of(gather_windows(self.series.demand, self.starts, self.horizon))

    @cached_property
    def table(self) -> ActionTable:
        """Outcome of every action; arrays shaped (C, J, K+1)."""
        windows = gather_windows(self.series.demand, self.starts, self.horizon)
        flat = evaluate_actions(windows.reshape(-1, self.horizon), self.layout,
                                self.policy, self.reward_params)
        shape = (self.n_macrocells, self.n_decisions, self.layout.k_small + 1)
        return ActionTable(**{k: v.reshape(shape) for k, v in vars(flat).items()})

    @cached_property
    def demand_rate(self) -> np.ndarray:
        """Time-averaged demand rate per macrocell over the decision windows."""
        return self.upcoming[..., 1].mean(axis=1) / self.capacity

    def pick(self, field: str, actions: np.ndarray) -> np.ndarray:
        """Select ``table.<field>`` entries for an action array of shape (C, J)."""
        values = getattr(self.table, field)
        return np.take_along_axis(values, np.asarray(actions, dtype=int)[..., None], axis=-1)[..., 0]
