"""Macrocell decision process: window statistics, stepping, reward."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .hetnet import (
    CellLayout,
    DistributionPolicy,
    cell_energy_and_throughput,
    distribute_load,
    energy_efficiency,
    loading_rate,
)

# Upper edges of the demand-rate groups; the last group is open-ended.
GROUP_EDGES = (0.3, 0.7, 1.0, 2.0)
GROUP_LABELS = ("0-0.3", "0.3-0.7", "0.7-1", "1-2", ">2")


class DemandStats(NamedTuple):
    d_min: float
    d_avg: float
    d_max: float


class RewardVariant(str, enum.Enum):
    LITERAL = "literal"
    BAND_RELATIVE = "band_relative"


@dataclass(frozen=True)
class RewardParams:
    beta: float = 100.0
    gamma: float = 1.0
    rho_th1: float = 0.7
    rho_th2: float = 0.5
    w1: float = 10.0
    w2: float = 10.0
    w3: float = 10.0
    w4: float = 10.0
    active_only: bool = True
    variant: RewardVariant = RewardVariant.LITERAL

    def __post_init__(self):
        if not self.rho_th1 > self.rho_th2 > 0:
            raise ValueError("thresholds must satisfy rho_th1 > rho_th2 > 0")
        if min(self.w1, self.w2, self.w3, self.w4) <= 0:
            raise ValueError("reward weights must be > 0")
        object.__setattr__(self, "variant", RewardVariant(self.variant))


@dataclass(frozen=True)
class StepOutcome:
    """Result of holding one action over a decision window.

    ``rho_m_offered`` is the window-averaged traffic routed to the macro BS
    before its capacity cap (served + dropped); it exceeds 1 exactly when
    the macro BS is still overloaded after offloading.
    """

    action: int
    reward: float
    r_e: float
    r_rho: float
    rho_m: float
    rho_s: np.ndarray
    rho_m_offered: float
    throughput: float
    energy: float
    dropped: float


def window_stats(demands: Sequence[float]) -> DemandStats:
    values = np.asarray(demands, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("window_stats needs at least one demand value")
    return DemandStats(float(values.min()), float(values.mean()), float(values.max()))


def _small_term(rho_m: float, rho_s: float, p: RewardParams) -> float:
    if rho_m < p.rho_th1 and rho_s < p.rho_th2:
        return -math.exp(p.w2 * (p.rho_th1 - rho_s))
    if p.rho_th2 < rho_s < p.rho_th1:
        if p.variant is RewardVariant.BAND_RELATIVE:
            return math.exp(p.w3 * (rho_s - p.rho_th2))
        return math.exp(p.w3 * rho_s)
    if rho_s > p.rho_th1:
        return -math.exp(p.w4 * (rho_s - p.rho_th1))
    return 0.0


def loading_reward(
    rho_m: float,
    rho_s: Sequence[float],
    active: Sequence[bool],
    params: RewardParams,
) -> float:
    """Loading-rate reward component.

    Punishes an overloaded macro BS, under-loaded and overloaded small BSs,
    and rewards small BSs inside the ``(rho_th2, rho_th1)`` band.
    """
    total = 0.0
    if rho_m > params.rho_th1:
        total -= math.exp(params.w1 * (rho_m - params.rho_th1))
    for rs, on in zip(rho_s, active):
        if params.active_only and not on:
            continue
        total += _small_term(rho_m, float(rs), params)
    return total


def step(
    demands_in_window: Sequence[float],
    action: int,
    layout: CellLayout,
    policy: DistributionPolicy | str,
    params: RewardParams,
) -> StepOutcome:
    """Hold ``action`` small BSs ON over the window and score the result."""
    demands = np.asarray(demands_in_window, dtype=float).reshape(-1)
    if demands.size == 0:
        raise ValueError("decision window must contain at least one slot")
    if not (0 <= action <= layout.k_small) or int(action) != action:
        raise ValueError(f"action must be an integer in [0, {layout.k_small}], got {action!r}")
    action = int(action)
    active = np.arange(layout.k_small) < action
    t_r = layout.t_r
    m = demands.size

    ee_sum = d_sum = e_sum = drop_sum = 0.0
    rho_m_sum = offered_sum = 0.0
    rho_s_sum = np.zeros(layout.k_small)
    for demand in demands:
        load = distribute_load(float(demand), active, layout, policy)
        d, e = cell_energy_and_throughput(load, active, layout)
        ee_sum += energy_efficiency(d, e)
        d_sum += d
        e_sum += e
        drop_sum += load.dropped
        rho_m_sum += loading_rate(load.x_macro, layout.macro_profile.rate, t_r)
        offered_sum += loading_rate(load.x_macro + load.dropped, layout.macro_profile.rate, t_r)
        rho_s_sum += load.x_small / layout.small_capacity

    rho_m = rho_m_sum / m
    rho_s = rho_s_sum / m
    r_e = ee_sum / m
    r_rho = loading_reward(rho_m, rho_s, active, params)
    return StepOutcome(
        action=action,
        reward=params.beta * r_e + params.gamma * r_rho,
        r_e=r_e,
        r_rho=r_rho,
        rho_m=rho_m,
        rho_s=rho_s,
        rho_m_offered=offered_sum / m,
        throughput=d_sum,
        energy=e_sum,
        dropped=drop_sum,
    )


@dataclass(frozen=True)
class ActionTable:
    """Outcomes of every action 0..K for a batch of decision windows.

    Every array has shape ``(n_windows, K + 1)``; ``rho_s`` is the common
    average loading rate of the active small BSs (0 for action 0).
    """

    reward: np.ndarray
    r_e: np.ndarray
    r_rho: np.ndarray
    rho_m: np.ndarray
    rho_s: np.ndarray
    rho_m_offered: np.ndarray
    throughput: np.ndarray
    energy: np.ndarray
    dropped: np.ndarray


def _small_term_vec(rho_m, rho_s, p: RewardParams):
    out = np.zeros(np.broadcast(rho_m, rho_s).shape)
    under = (rho_m < p.rho_th1) & (rho_s < p.rho_th2)
    band = ~under & (rho_s > p.rho_th2) & (rho_s < p.rho_th1)
    over = ~under & ~band & (rho_s > p.rho_th1)
    if p.variant is RewardVariant.BAND_RELATIVE:
        positive = np.exp(p.w3 * (rho_s - p.rho_th2))
    else:
        positive = np.exp(p.w3 * rho_s)
    out = np.where(under, -np.exp(p.w2 * (p.rho_th1 - rho_s)), out)
    out = np.where(band, positive, out)
    out = np.where(over, -np.exp(p.w4 * (rho_s - p.rho_th1)), out)
    return out


def evaluate_actions(
    windows: np.ndarray,
    layout: CellLayout,
    policy: DistributionPolicy | str,
    params: RewardParams,
) -> ActionTable:
    """Vectorized :func:`step` over windows ``(n_windows, M)`` and all actions.

    Relies on all small BSs being identical, so the active ones share one load.
    """
    policy = DistributionPolicy(policy)
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 2 or windows.shape[1] == 0:
        raise ValueError("windows must have shape (n_windows, M) with M >= 1")
    if np.any(windows < 0) or not np.all(np.isfinite(windows)):
        raise ValueError("demands must be finite and >= 0")
    k = layout.k_small
    cap_m, cap_s, t_r = layout.macro_capacity, layout.small_capacity, layout.t_r
    mp, sp = layout.macro_profile, layout.small_profile

    demand = windows[:, None, :]  # (W, 1, M)
    a = np.arange(k + 1, dtype=float)[None, :, None]  # (1, K+1, 1)
    if policy is DistributionPolicy.CAPACITY_PROPORTIONAL:
        total = cap_m + a * cap_s
        served = np.minimum(demand, total)
        rho = served / total
        x_m = rho * cap_m
        x_s = np.where(a > 0, rho * cap_s, 0.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(a > 0, np.minimum(cap_s, demand / np.maximum(a, 1.0)), 0.0)
        remainder = np.maximum(0.0, demand - a * share)
        x_m = np.minimum(cap_m, remainder)
        x_s = share
        served = x_m + a * x_s
    dropped = demand - served
    rho_m_slot = x_m / cap_m
    rho_s_slot = x_s / cap_s
    energy = (mp.p_cst + mp.alpha * rho_m_slot * mp.p_tx) * t_r + a * (
        sp.p_cst + sp.alpha * rho_s_slot * sp.p_tx
    ) * t_r
    ee = served / energy

    r_e = ee.mean(axis=2)
    rho_m = rho_m_slot.mean(axis=2)
    rho_s = rho_s_slot.mean(axis=2)
    a2 = a[..., 0]
    r_rho = np.where(rho_m > params.rho_th1, -np.exp(params.w1 * (rho_m - params.rho_th1)), 0.0)
    r_rho = r_rho + a2 * _small_term_vec(rho_m, rho_s, params)
    if not params.active_only:
        r_rho = r_rho + (k - a2) * _small_term_vec(rho_m, 0.0, params)
    return ActionTable(
        reward=params.beta * r_e + params.gamma * r_rho,
        r_e=r_e,
        r_rho=r_rho,
        rho_m=rho_m,
        rho_s=rho_s,
        rho_m_offered=((x_m + dropped) / cap_m).mean(axis=2),
        throughput=served.sum(axis=2),
        energy=energy.sum(axis=2),
        dropped=dropped.sum(axis=2),
    )


def demand_rate(stats: DemandStats, rate_m: float, t_r: float) -> float:
    capacity = rate_m * t_r
    if not capacity > 0:
        raise ValueError("macro capacity must be > 0")
    return stats.d_avg / capacity


def group_of(avg_rate: float) -> int:
    """Demand-rate group index, intervals closed below: [0,.3) [.3,.7) [.7,1) [1,2) [2,inf)."""
    if avg_rate < 0:
        raise ValueError("demand rate must be >= 0")
    for idx, edge in enumerate(GROUP_EDGES):
        if avg_rate < edge:
            return idx
    return len(GROUP_EDGES)
