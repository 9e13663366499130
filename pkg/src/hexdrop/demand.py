"""Request generation: trip-record replay and hourly Poisson synthesis."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .hexgrid import HexCoord, HexGrid, axial_to_planar


@dataclass(frozen=True)
class TripRecord:
    request_tick: int
    origin: HexCoord
    destination: HexCoord


@dataclass
class Request:
    origin: int
    destination: int
    request_tick: int
    id: int = -1
    status: str = "open"
    wait: int = 0
    vehicle: int = -1


@dataclass
class DemandProfile:
    """Per-hour arrival rates (requests/tick) and destination distributions.

    ``rates`` is ``(n_hours, n_cells)``; ``dest`` is ``(n_hours, n_cells, n_cells)``
    where a row of zeros marks an origin that never produces requests.
    """
    rates: np.ndarray
    dest: np.ndarray
    hour_ticks: int = 60

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.dest = np.asarray(self.dest, dtype=np.float64)
        if (self.rates < 0).any():
            raise ValueError("rates must be non-negative")
        sums = self.dest.sum(axis=-1)
        active = self.rates > 0
        if not np.all(np.abs(sums[active] - 1.0) <= 1e-9):
            raise ValueError("destination distributions of active origins must sum to 1")

    @property
    def n_hours(self) -> int:
        return self.rates.shape[0]

    @property
    def n_cells(self) -> int:
        return self.rates.shape[1]

    def hour_of(self, tick: int) -> int:
        return (tick // self.hour_ticks) % self.n_hours

    def total_rate(self) -> float:
        return float(self.rates.sum() * self.hour_ticks)


@dataclass
class LoadReport:
    accepted: int = 0
    clamped: int = 0
    rejected: int = 0

    def to_json(self) -> str:
        return json.dumps({"accepted": self.accepted, "clamped": self.clamped,
                           "rejected": self.rejected})


@dataclass(frozen=True)
class Projection:
    """Affine map from raw planar coordinates to grid meters."""
    x0: float = 0.0
    y0: float = 0.0
    scale: float = 1.0

    def __call__(self, x, y):
        return (x - self.x0) * self.scale, (y - self.y0) * self.scale


class TripFormatError(ValueError):
    pass


HEADER = ["request_time", "origin_x", "origin_y", "dest_x", "dest_y"]


def parse_time(s: str, tick_seconds: int = 60) -> int:
    s = s.strip()
    if ":" in s:
        parts = [int(p) for p in s.split(":")]
        while len(parts) < 3:
            parts.append(0)
        h, m, sec = parts
        return (h * 3600 + m * 60 + sec) // tick_seconds
    return int(float(s))


def _parse_axial(s: str) -> HexCoord:
    q, r = s.split(":")
    return HexCoord(int(q), int(r))


def load_trips(path, grid: HexGrid, projection: Projection | None = None,
               tick_seconds: int = 60, episode_ticks: int | None = None,
               report: LoadReport | None = None) -> list[TripRecord]:
    """Read a trip CSV.

    Coordinates are either axial ids (``q:r``, in which case the matching
    ``_y`` column may be omitted or empty) or planar meters snapped to the
    nearest centroid.  Off-grid points are clamped and counted in ``report``.
    """
    projection = projection or Projection()
    report = report if report is not None else LoadReport()
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != HEADER:
            raise TripFormatError(f"line 1: expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rec, clamped = _parse_row(row, grid, projection, tick_seconds)
            except (ValueError, KeyError) as exc:
                raise TripFormatError(f"line {lineno}: {exc}") from None
            if episode_ticks is not None and not 0 <= rec.request_tick < episode_ticks:
                report.rejected += 1
                continue
            report.accepted += 1
            report.clamped += clamped
            records.append(rec)
    records.sort(key=lambda r: r.request_tick)
    return records


def _parse_row(row, grid, projection, tick_seconds):
    cells = [c.strip() for c in row]
    tick = parse_time(cells[0], tick_seconds)
    if tick < 0:
        raise ValueError("negative request time")
    coords = [c for c in cells[1:] if c != ""]
    clamped = False
    points = []
    if len(coords) == 2 and all(":" in c for c in coords):
        for c in coords:
            h = _parse_axial(c)
            if h not in grid.index:
                x, y = axial_to_planar(h, grid.spec.pitch)
                idx, _ = grid.nearest_cell(x, y)
                h = grid.cells[idx]
                clamped = True
            points.append(h)
    elif len(coords) == 4:
        vals = [float(c) for c in coords]
        for x, y in ((vals[0], vals[1]), (vals[2], vals[3])):
            idx, was_clamped = grid.nearest_cell(*projection(x, y))
            clamped |= was_clamped
            points.append(grid.cells[idx])
    else:
        raise ValueError(f"cannot parse coordinates {coords!r}")
    return TripRecord(tick, points[0], points[1]), int(clamped)


def build_profile(trips, grid: HexGrid, hour_ticks: int = 60, n_hours: int = 24) -> DemandProfile:
    H = grid.n_cells
    counts = np.zeros((n_hours, H))
    od = np.zeros((n_hours, H, H))
    for t in trips:
        h = (t.request_tick // hour_ticks) % n_hours
        o = grid.cell_index(t.origin)
        d = grid.cell_index(t.destination)
        counts[h, o] += 1
        od[h, o, d] += 1
    rates = counts / hour_ticks
    with np.errstate(invalid="ignore", divide="ignore"):
        dest = np.where(counts[..., None] > 0, od / np.maximum(counts[..., None], 1), 0.0)
    return DemandProfile(rates, dest, hour_ticks)


def synth_scenario(grid: HexGrid, hotspots=(), base_rate: float = 0.0,
                   hour_ticks: int = 60, n_hours: int = 24, dest=None) -> DemandProfile:
    """Gaussian-in-time hotspots on top of a flat base rate.

    ``hotspots`` holds ``(cell, peak_rate, peak_hour, width_hours)`` tuples;
    ``cell`` may be a coordinate or a canonical index.
    """
    if base_rate < 0:
        raise ValueError("base rate must be non-negative")
    H = grid.n_cells
    rates = np.full((n_hours, H), float(base_rate))
    hours = np.arange(n_hours, dtype=np.float64)
    for cell, peak, peak_hour, width in hotspots:
        if peak < 0:
            raise ValueError("peak rate must be non-negative")
        idx = cell if isinstance(cell, (int, np.integer)) else grid.cell_index(cell)
        rates[:, idx] += peak * np.exp(-0.5 * ((hours - peak_hour) / width) ** 2)
    if dest is None:
        dest = np.full((n_hours, H, H), 1.0 / H)
    else:
        dest = np.broadcast_to(np.asarray(dest, dtype=np.float64), (n_hours, H, H)).copy()
    return DemandProfile(rates, dest, hour_ticks)


def sample_requests(profile: DemandProfile, tick: int, rng: np.random.Generator) -> list[Request]:
    h = profile.hour_of(tick)
    counts = rng.poisson(profile.rates[h])
    out = []
    for o in np.flatnonzero(counts):
        dests = rng.choice(profile.n_cells, size=int(counts[o]), p=profile.dest[h, o])
        out.extend(Request(int(o), int(d), tick) for d in dests)
    return out


class PoissonDemand:
    def __init__(self, profile: DemandProfile):
        self.profile = profile

    def requests_at(self, tick, rng, grid=None):
        return sample_requests(self.profile, tick, rng)


class ReplayDemand:
    """Inject each trip record exactly once at its own tick."""

    def __init__(self, trips, grid: HexGrid):
        self.by_tick = defaultdict(list)
        for t in trips:
            self.by_tick[t.request_tick].append(
                (grid.cell_index(t.origin), grid.cell_index(t.destination)))

    def requests_at(self, tick, rng=None, grid=None):
        return [Request(o, d, tick) for o, d in self.by_tick.get(tick, ())]
