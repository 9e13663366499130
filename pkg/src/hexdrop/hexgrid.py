"""Hexagonal-disk grid in axial coordinates.

Cells are indexed canonically by sorting their ``(q, r)`` pairs, so every
table derived from a :class:`HexGrid` (neighbors, distances, travel times)
is reproducible across runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np


class HexCoord(NamedTuple):
    q: int
    r: int


# Action codes 1..6 map to these offsets in order; 0 is "stay".
DIRECTIONS = (
    HexCoord(1, 0),    # E
    HexCoord(1, -1),   # NE
    HexCoord(0, -1),   # NW
    HexCoord(-1, 0),   # W
    HexCoord(-1, 1),   # SW
    HexCoord(0, 1),    # SE
)
DIRECTION_NAMES = ("stay", "E", "NE", "NW", "W", "SW", "SE")
N_ACTIONS = 7
STAY = 0


@dataclass(frozen=True)
class GridSpec:
    radius: int = 5
    pitch: float = 600.0
    speed: float = 600.0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be > 0, got {self.pitch}")
        if not self.speed > 0:
            raise ValueError(f"speed must be > 0, got {self.speed}")


def hex_distance(a, b) -> int:
    dq = a[0] - b[0]
    dr = a[1] - b[1]
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def ring_index(origin, h) -> int:
    """Which hexagonal ring around ``origin`` the cell ``h`` lies on."""
    return hex_distance(origin, h)


def in_bounds(h, g: GridSpec) -> bool:
    return hex_distance(h, (0, 0)) <= g.radius


def apply_action(h, a: int, g: GridSpec) -> HexCoord:
    """Move one cell in direction ``a``; moves off the disk leave ``h`` unchanged."""
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action code must be in 0..6, got {a}")
    h = HexCoord(*h)
    if a == STAY:
        return h
    d = DIRECTIONS[a - 1]
    nxt = HexCoord(h.q + d.q, h.r + d.r)
    return nxt if in_bounds(nxt, g) else h


def travel_time(a, b, g: GridSpec) -> int:
    dist = hex_distance(a, b)
    if dist == 0:
        return 0
    # round before ceil so 1200/600 stays exactly 2
    return int(math.ceil(round(dist * g.pitch / g.speed, 9)))


def hex_line(a, b) -> list[HexCoord]:
    """Cells visited walking the straight line from ``a`` to ``b`` (inclusive)."""
    n = hex_distance(a, b)
    if n == 0:
        return [HexCoord(*a)]
    # nudge to avoid landing exactly on cell edges
    aq, ar = a[0] + 1e-6, a[1] + 1e-6
    bq, br = b[0] + 1e-6, b[1] + 1e-6
    out = []
    for i in range(n + 1):
        t = i / n
        out.append(cube_round(aq + (bq - aq) * t, ar + (br - ar) * t))
    return out


def cube_round(fq: float, fr: float) -> HexCoord:
    fs = -fq - fr
    q, r, s = round(fq), round(fr), round(fs)
    dq, dr, ds = abs(q - fq), abs(r - fr), abs(s - fs)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return HexCoord(int(q), int(r))


def axial_to_planar(h, pitch: float) -> tuple[float, float]:
    """Centroid of ``h`` in meters (pointy-top layout, neighbor spacing ``pitch``)."""
    x = pitch * (h[0] + h[1] / 2.0)
    y = pitch * (math.sqrt(3) / 2.0) * h[1]
    return x, y


def planar_to_axial(x: float, y: float, pitch: float) -> HexCoord:
    r = y / (pitch * math.sqrt(3) / 2.0)
    q = x / pitch - r / 2.0
    return cube_round(q, r)


class HexGrid:
    """Precomputed lookup tables over all cells of a :class:`GridSpec`."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        R = spec.radius
        cells = [HexCoord(q, r)
                 for q in range(-R, R + 1)
                 for r in range(-R, R + 1)
                 if hex_distance((q, r), (0, 0)) <= R]
        self.cells: list[HexCoord] = sorted(cells)
        self.index: dict[HexCoord, int] = {c: i for i, c in enumerate(self.cells)}

    def __len__(self):
        return len(self.cells)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_index(self, h) -> int:
        return self.index[HexCoord(*h)]

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``[n_cells, 7]`` index of the cell reached by each action (clamped)."""
        tab = np.empty((self.n_cells, N_ACTIONS), dtype=np.int64)
        for i, c in enumerate(self.cells):
            for a in range(N_ACTIONS):
                tab[i, a] = self.index[apply_action(c, a, self.spec)]
        return tab

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        q = np.array([c.q for c in self.cells])
        r = np.array([c.r for c in self.cells])
        dq = q[:, None] - q[None, :]
        dr = r[:, None] - r[None, :]
        return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2

    @cached_property
    def travel_time_matrix(self) -> np.ndarray:
        d = self.distance_matrix
        tt = np.ceil(np.round(d * self.spec.pitch / self.spec.speed, 9)).astype(np.int64)
        tt[d == 0] = 0
        return tt

    @cached_property
    def centroids(self) -> np.ndarray:
        return np.array([axial_to_planar(c, self.spec.pitch) for c in self.cells])

    def nearest_cell(self, x: float, y: float) -> tuple[int, bool]:
        """Nearest in-bounds cell index for a planar point, and whether it was clamped."""
        h = planar_to_axial(x, y, self.spec.pitch)
        if h in self.index:
            return self.index[h], False
        d2 = ((self.centroids - np.array([x, y])) ** 2).sum(axis=1)
        return int(np.argmin(d2)), True

    def line_indices(self, a: int, b: int) -> list[int]:
        return [self.index[h] for h in hex_line(self.cells[a], self.cells[b])]
