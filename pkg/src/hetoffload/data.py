"""Traffic and tower ingestion, macrocell mapping, demand series."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DataFormatError

logger = logging.getLogger(__name__)

SLOT_MS = 600_000
SLOTS_PER_DAY = 144
DATA_SIZE_PER_ACTIVITY_MB = 15.0

# Milan telecom files: square id, time interval, country code, sms in/out,
# call in/out, internet.
TRAFFIC_COLUMNS = {"grid": 0, "timestamp": 1, "activity": 7}
# OpenCellID export: radio, mcc, net, area, cell, unit, lon, lat, ...
TOWER_COLUMNS = {"type": 0, "mcc": 1, "mnc": 2, "lon": 6, "lat": 7}

Source = Union[str, "os.PathLike[str]", IO[str], IO[bytes]]


@dataclass(frozen=True)
class GridTrafficRecord:
    grid_id: int
    slot: int
    activity: float


@dataclass
class TrafficParseResult:
    records: list[GridTrafficRecord]
    malformed: int = 0
    epoch_ms: int | None = None


@dataclass
class MacrocellMap:
    bs_coords: np.ndarray
    grid_ids: np.ndarray
    grid_centers: np.ndarray
    assignment: dict[int, int]

    @property
    def n_macrocells(self) -> int:
        return len(self.bs_coords)

    def members(self, macrocell: int) -> list[int]:
        return [g for g, c in self.assignment.items() if c == macrocell]


@dataclass(frozen=True)
class DemandSeries:
    """Per-macrocell demand in megabits, one column per recording slot."""

    demand: np.ndarray
    t_r: float = 600.0
    data_size_per_activity: float = DATA_SIZE_PER_ACTIVITY_MB
    first_slot: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        demand = np.array(self.demand, dtype=float, ndmin=2)
        if demand.ndim != 2:
            raise ValueError("demand must be a 2-D array (macrocells, slots)")
        if np.any(demand < 0) or not np.all(np.isfinite(demand)):
            raise ValueError("demand values must be finite and >= 0")
        demand.setflags(write=False)
        object.__setattr__(self, "demand", demand)

    @property
    def n_macrocells(self) -> int:
        return self.demand.shape[0]

    @property
    def n_slots(self) -> int:
        return self.demand.shape[1]

    def slice(self, start: int, stop: int | None = None) -> "DemandSeries":
        return DemandSeries(
            self.demand[:, start:stop],
            t_r=self.t_r,
            data_size_per_activity=self.data_size_per_activity,
            first_slot=self.first_slot + start,
            meta=dict(self.meta),
        )

    def __eq__(self, other):
        if not isinstance(other, DemandSeries):
            return NotImplemented
        return (
            self.demand.shape == other.demand.shape
            and np.array_equal(self.demand, other.demand)
            and self.t_r == other.t_r
            and self.data_size_per_activity == other.data_size_per_activity
            and self.first_slot == other.first_slot
        )


def _open_text(source: Source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", newline="", encoding="utf-8"), True
    if isinstance(source, io.TextIOBase):
        return source, False
    try:
        sample = source.read(0)
    except Exception as exc:  # pragma: no cover - defensive
        raise OSError(f"unreadable stream: {exc}") from exc
    if isinstance(sample, bytes):
        return io.TextIOWrapper(source, encoding="utf-8", newline=""), False
    return source, False


def _sniff_delimiter(line: str) -> str:
    return "\t" if "\t" in line else ","


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_rows(source: Source, delimiter: str | None) -> list[list[str]]:
    handle, owned = _open_text(source)
    try:
        text = handle.read()
    finally:
        if owned:
            handle.close()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    delim = delimiter or _sniff_delimiter(lines[0])
    return list(csv.reader(lines, delimiter=delim))


def parse_traffic_records(
    source: Source,
    columns: Mapping[str, int] | None = None,
    delimiter: str | None = None,
    epoch_ms: int | None = None,
) -> TrafficParseResult:
    """Read grid traffic rows and sum activity per (grid, 10-minute slot).

    Timestamps are epoch milliseconds; slot 0 starts at ``epoch_ms`` or, when
    omitted, at the earliest timestamp in the file. Rows with an empty
    activity field carry no traffic and are skipped silently; rows that
    cannot be parsed are skipped and counted.
    """
    cols = {**TRAFFIC_COLUMNS, **(columns or {})}
    rows = _read_rows(source, delimiter)
    if rows and not any(_is_number(f) for f in rows[0]):
        rows = rows[1:]

    parsed: list[tuple[int, int, float]] = []
    malformed = 0
    for row in rows:
        try:
            raw_activity = row[cols["activity"]].strip()
            grid = int(float(row[cols["grid"]]))
            ts = int(float(row[cols["timestamp"]]))
        except (IndexError, ValueError):
            malformed += 1
            continue
        if raw_activity == "":
            continue
        try:
            activity = float(raw_activity)
        except ValueError:
            malformed += 1
            continue
        if not math.isfinite(activity) or activity < 0:
            malformed += 1
            continue
        parsed.append((grid, ts, activity))

    if rows and malformed > 0.5 * len(rows):
        raise DataFormatError(f"{malformed} of {len(rows)} traffic rows are malformed")
    if malformed:
        logger.warning("skipped %d malformed traffic rows", malformed)
    if not parsed:
        return TrafficParseResult([], malformed, epoch_ms)

    epoch = min(ts for _, ts, _ in parsed) if epoch_ms is None else epoch_ms
    totals: dict[tuple[int, int], float] = defaultdict(float)
    for grid, ts, activity in parsed:
        slot = (ts - epoch) // SLOT_MS
        if slot < 0:
            malformed += 1
            continue
        totals[(grid, slot)] += activity
    records = [
        GridTrafficRecord(grid, slot, act)
        for (grid, slot), act in sorted(totals.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    ]
    return TrafficParseResult(records, malformed, epoch)


def parse_cell_towers(
    source: Source,
    mcc: int,
    mnc: int,
    columns: Mapping[str, int] | None = None,
    delimiter: str | None = None,
    tol: float = 1e-6,
) -> list[tuple[float, float]]:
    """Return deduplicated (lon, lat) of towers matching ``mcc`` and ``mnc``."""
    cols = {**TOWER_COLUMNS, **(columns or {})}
    coords = []
    for row in _read_rows(source, delimiter):
        try:
            row_mcc = int(float(row[cols["mcc"]]))
            row_mnc = int(float(row[cols["mnc"]]))
            lon = float(row[cols["lon"]])
            lat = float(row[cols["lat"]])
        except (IndexError, ValueError):
            continue
        if row_mcc == int(mcc) and row_mnc == int(mnc):
            coords.append((lon, lat))

    if not coords:
        warnings.warn(f"no towers match mcc={mcc} mnc={mnc}", stacklevel=2)
        return []

    points = np.asarray(coords)
    tree = cKDTree(points)
    neighbours: dict[int, list[int]] = defaultdict(list)
    for i, j in tree.query_pairs(r=tol, p=np.inf):
        neighbours[max(i, j)].append(min(i, j))
    kept: list[int] = []
    kept_set: set[int] = set()
    for idx in range(len(points)):
        if any(n in kept_set for n in neighbours.get(idx, ())):
            continue
        kept.append(idx)
        kept_set.add(idx)
    return [coords[i] for i in kept]


def parse_grid_centers(source: Source, delimiter: str | None = None) -> dict[int, tuple[float, float]]:
    """Read ``grid_id, lon, lat`` rows (header optional)."""
    centers = {}
    for row in _read_rows(source, delimiter):
        try:
            centers[int(float(row[0]))] = (float(row[1]), float(row[2]))
        except (IndexError, ValueError):
            continue
    return centers


def assign_grids(
    bs_coords: Sequence[Sequence[float]],
    grid_centers: Union[Mapping[int, Sequence[float]], Sequence[Sequence[float]]],
) -> MacrocellMap:
    """Map every grid to its nearest macro BS (Euclidean, lowest index on ties)."""
    bs = np.asarray(bs_coords, dtype=float).reshape(-1, 2)
    if len(bs) == 0:
        raise ValueError("at least one base station is required")
    if isinstance(grid_centers, Mapping):
        ids = np.asarray(list(grid_centers.keys()), dtype=int)
        centers = np.asarray([grid_centers[g] for g in ids], dtype=float).reshape(-1, 2)
    else:
        centers = np.asarray(grid_centers, dtype=float).reshape(-1, 2)
        ids = np.arange(len(centers))
    if len(centers) == 0:
        raise ValueError("at least one grid is required")

    owner = np.empty(len(centers), dtype=int)
    chunk = 4096
    for lo in range(0, len(centers), chunk):
        diff = centers[lo:lo + chunk, None, :] - bs[None, :, :]
        owner[lo:lo + chunk] = np.argmin((diff ** 2).sum(axis=2), axis=1)
    assignment = {int(g): int(c) for g, c in zip(ids, owner)}
    return MacrocellMap(bs, ids, centers, assignment)


def synthetic_layout(
    seed: int, n_bs: int, side: int = 12
) -> tuple[np.ndarray, dict[int, tuple[float, float]]]:
    """Uniform ``side`` x ``side`` lattice of grid centers and seeded BS draws.

    Grid ids are assigned row-major starting at 0; coordinates are lattice
    units in ``[0, side)``.
    """
    rng = np.random.default_rng(seed)
    centers = {
        r * side + c: (c + 0.5, r + 0.5) for r in range(side) for c in range(side)
    }
    bs = rng.uniform(0.0, side, size=(n_bs, 2))
    return bs, centers


def aggregate_demand(
    records: Iterable[GridTrafficRecord],
    cmap: MacrocellMap,
    data_size_per_activity: float = DATA_SIZE_PER_ACTIVITY_MB,
    n_slots: int | None = None,
    t_r: float = 600.0,
) -> DemandSeries:
    """Sum grid activity into per-macrocell demand (megabits); gaps are zero."""
    records = list(records)
    unmapped = sorted({r.grid_id for r in records if r.grid_id not in cmap.assignment})
    if unmapped:
        raise ValueError(f"records reference unmapped grid ids: {unmapped}")
    if n_slots is None:
        n_slots = max((r.slot for r in records), default=-1) + 1
    demand = np.zeros((cmap.n_macrocells, n_slots))
    for r in records:
        if 0 <= r.slot < n_slots:
            demand[cmap.assignment[r.grid_id], r.slot] += r.activity
    demand *= data_size_per_activity
    return DemandSeries(demand, t_r=t_r, data_size_per_activity=data_size_per_activity)


def train_test_split(series: DemandSeries, ratio: float = 0.9) -> tuple[DemandSeries, DemandSeries]:
    """Chronological split: the first ``floor(ratio * n_slots)`` slots train."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    if series.n_slots < 2:
        raise ValueError("series must have at least 2 slots to split")
    cut = int(math.floor(ratio * series.n_slots))
    return series.slice(0, cut), series.slice(cut)


def synth_traffic(
    seed: int,
    n_macrocells: int,
    n_days: int,
    base: float,
    amplitude: float,
    noise_std: float,
    overload_fraction: float = 0.0,
    scale_range: tuple[float, float] = (1.0, 1.0),
    overload_peak_rate: float = 2.5,
    macro_capacity: float = 7500.0,
    t_r: float = 600.0,
) -> DemandSeries:
    """Daily-periodic synthetic demand (megabits per slot).

    Each macrocell gets ``s_c * (base + amplitude * sin(2 pi n / 144 + phase_c))``
    plus Gaussian noise, floored at zero. ``s_c`` is drawn from ``scale_range``;
    a ``overload_fraction`` share of macrocells is rescaled so its noiseless
    peak demand rate equals ``overload_peak_rate`` (when that is an increase).
    """
    if min(base, amplitude, noise_std) < 0 or not 0 <= overload_fraction <= 1:
        raise ValueError("magnitudes must be >= 0 and overload_fraction in [0, 1]")
    rng = np.random.default_rng(seed)
    n = np.arange(n_days * SLOTS_PER_DAY)
    scale = rng.uniform(scale_range[0], scale_range[1], size=n_macrocells)
    phase = rng.uniform(0.0, 2 * np.pi, size=n_macrocells)
    noise = rng.normal(0.0, 1.0, size=(n_macrocells, n.size)) * noise_std

    n_over = int(round(overload_fraction * n_macrocells))
    overloaded = rng.permutation(n_macrocells)[:n_over]
    peak = scale * (base + amplitude)
    for c in overloaded:
        if peak[c] > 0:
            scale[c] *= max(1.0, overload_peak_rate * macro_capacity / peak[c])

    clean = scale[:, None] * (base + amplitude * np.sin(2 * np.pi * n[None, :] / SLOTS_PER_DAY + phase[:, None]))
    demand = np.maximum(0.0, clean + scale[:, None] * noise)
    meta = {"seed": seed, "overloaded": sorted(int(c) for c in overloaded)}
    return DemandSeries(demand, t_r=t_r, meta=meta)


DEMAND_CSV_HEADER = ("macrocell", "slot", "demand_mb")


def write_demand_csv(series: DemandSeries, target: Union[str, "os.PathLike[str]", IO[str]]) -> None:
    """Write ``macrocell,slot,demand_mb`` rows; values round-trip exactly."""
    owned = isinstance(target, (str, os.PathLike))
    handle = open(target, "w", newline="", encoding="utf-8") if owned else target
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DEMAND_CSV_HEADER)
        for c in range(series.n_macrocells):
            for n in range(series.n_slots):
                writer.writerow((c, series.first_slot + n, repr(float(series.demand[c, n]))))
    finally:
        if owned:
            handle.close()


def read_demand_csv(source: Source, t_r: float = 600.0,
                    data_size_per_activity: float = DATA_SIZE_PER_ACTIVITY_MB) -> DemandSeries:
    rows = _read_rows(source, ",")
    if not rows or tuple(h.strip() for h in rows[0]) != DEMAND_CSV_HEADER:
        raise DataFormatError(f"demand CSV must start with header {','.join(DEMAND_CSV_HEADER)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            entries.append((int(row[0]), int(row[1]), float(row[2])))
        except (IndexError, ValueError) as exc:
            raise DataFormatError(f"bad demand row at line {lineno}: {row!r}") from exc
    if not entries:
        raise DataFormatError("demand CSV has no rows")
    n_cells = max(e[0] for e in entries) + 1
    first = min(e[1] for e in entries)
    n_slots = max(e[1] for e in entries) - first + 1
    demand = np.zeros((n_cells, n_slots))
    for c, n, value in entries:
        demand[c, n - first] = value
    return DemandSeries(demand, t_r=t_r, data_size_per_activity=data_size_per_activity, first_slot=first)
