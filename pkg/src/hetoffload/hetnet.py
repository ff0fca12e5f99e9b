"""Per-slot physics of one macrocell: load split, power draw, energy efficiency.

Units throughout: traffic in megabits (Mb), rates in Mb/s, power in W,
energy in J.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BSPowerProfile:
    """Linear load-dependent power model of one base station."""

    p_cst: float
    p_tx: float
    alpha: float
    rate: float

    def __post_init__(self):
        for name in ("p_cst", "p_tx", "alpha", "rate"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")


MACRO_PROFILE = BSPowerProfile(p_cst=130.0, p_tx=20.0, alpha=4.7, rate=12.5)
SMALL_PROFILE = BSPowerProfile(p_cst=4.8, p_tx=1.0, alpha=8.0, rate=27.0)


@dataclass(frozen=True)
class CellLayout:
    """One macro BS plus ``k_small`` identical small BSs."""

    macro_profile: BSPowerProfile = MACRO_PROFILE
    small_profile: BSPowerProfile = SMALL_PROFILE
    k_small: int = 10
    t_r: float = 600.0

    def __post_init__(self):
        if self.k_small < 0:
            raise ValueError(f"k_small must be >= 0, got {self.k_small}")
        if not self.t_r > 0:
            raise ValueError(f"t_r must be > 0, got {self.t_r}")

    @property
    def macro_capacity(self) -> float:
        """Megabits the macro BS can carry in one recording slot."""
        return self.macro_profile.rate * self.t_r

    @property
    def small_capacity(self) -> float:
        return self.small_profile.rate * self.t_r


class DistributionPolicy(str, enum.Enum):
    """How a slot's demand is split over the active base stations.

    CAPACITY_PROPORTIONAL equalizes loading rates across all active BSs.
    SMALL_FIRST fills the active small BSs evenly before using the macro BS.
    """

    CAPACITY_PROPORTIONAL = "capacity_proportional"
    SMALL_FIRST = "small_first"


@dataclass
class LoadVector:
    x_macro: float
    x_small: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dropped: float = 0.0

    @property
    def served(self) -> float:
        return self.x_macro + float(np.sum(self.x_small))


def _as_active(active: Sequence[bool], k_small: int) -> np.ndarray:
    active = np.asarray(active, dtype=bool).reshape(-1)
    if active.shape[0] != k_small:
        raise ValueError(f"active has length {active.shape[0]}, expected K={k_small}")
    return active


def distribute_load(
    demand: float,
    active: Sequence[bool],
    layout: CellLayout,
    policy: DistributionPolicy | str = DistributionPolicy.CAPACITY_PROPORTIONAL,
) -> LoadVector:
    """Split ``demand`` megabits over the macro BS and the active small BSs.

    Anything beyond the combined capacity of the active BSs is dropped.
    """
    if not np.isfinite(demand) or demand < 0:
        raise ValueError(f"demand must be a finite value >= 0, got {demand!r}")
    active = _as_active(active, layout.k_small)
    policy = DistributionPolicy(policy)
    cap_m = layout.macro_capacity
    cap_s = layout.small_capacity
    n_on = int(active.sum())
    x_small = np.zeros(layout.k_small)

    if policy is DistributionPolicy.CAPACITY_PROPORTIONAL:
        total = cap_m + n_on * cap_s
        if demand <= total:
            rho = demand / total
            x_small[active] = rho * cap_s
            return LoadVector(x_macro=rho * cap_m, x_small=x_small, dropped=0.0)
        x_small[active] = cap_s
        return LoadVector(x_macro=cap_m, x_small=x_small, dropped=demand - total)

    remainder = demand
    if n_on:
        share = min(cap_s, demand / n_on)
        x_small[active] = share
        remainder = max(0.0, demand - share * n_on)
    x_macro = min(cap_m, remainder)
    return LoadVector(x_macro=x_macro, x_small=x_small, dropped=remainder - x_macro)


def loading_rate(x: float, rate: float, t_r: float) -> float:
    """Served traffic over capacity. Not clamped."""
    capacity = rate * t_r
    if not capacity > 0:
        raise ValueError("capacity rate*t_r must be > 0")
    return x / capacity


def macro_energy(rho_m: float, profile: BSPowerProfile, t_r: float) -> float:
    return (profile.p_cst + profile.alpha * rho_m * profile.p_tx) * t_r


def small_energy(rho_s: float, on: bool, profile: BSPowerProfile, t_r: float) -> float:
    if not on:
        return 0.0
    return (profile.p_cst + profile.alpha * rho_s * profile.p_tx) * t_r


def cell_energy_and_throughput(
    load: LoadVector, active: Sequence[bool], layout: CellLayout
) -> tuple[float, float]:
    """Return ``(throughput_mb, energy_j)`` for one recording slot."""
    active = _as_active(active, layout.k_small)
    t_r = layout.t_r
    rho_m = loading_rate(load.x_macro, layout.macro_profile.rate, t_r)
    energy = macro_energy(rho_m, layout.macro_profile, t_r)
    for x, on in zip(load.x_small, active):
        rho_s = loading_rate(x, layout.small_profile.rate, t_r)
        energy += small_energy(rho_s, bool(on), layout.small_profile, t_r)
    return load.served, energy


def energy_efficiency(d: float, e: float) -> float:
    """Megabits delivered per joule."""
    if not e > 0:
        raise ValueError(f"energy must be > 0, got {e!r}; a powered macro BS always draws p_cst")
    return d / e
