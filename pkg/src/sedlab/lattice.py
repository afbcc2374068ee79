"""Periodic grids and rasterized unit-volume inclusions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import GeometryError, InvalidParameterError, PreconditionError
from .pointgen import PointSet, periodic_displacement

FLUID = -1
# inclusion volumes stay within 1 +- VOLUME_SLACK * h (checked for d <= 5, h <= r_d / 2)
VOLUME_SLACK = 1.0


def unit_ball_radius(d: int) -> float:
    """Radius of the d-ball of unit volume."""
    if int(d) != d or d < 1:
        raise InvalidParameterError(f"dimension must be a positive integer, got {d}")
    return (math.gamma(d / 2 + 1) / math.pi ** (d / 2)) ** (1.0 / d)


def periodic_distance(x, y, L: float) -> float:
    return float(np.linalg.norm(periodic_displacement(x, y, L)))


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    h: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameterError(f"dimension must be >= 1, got {self.d}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParameterError(f"need at least 2 cells per side, got {self.n}")
        if not self.h > 0:
            raise InvalidParameterError(f"spacing must be positive, got {self.h}")
        if self.n ** self.d > np.iinfo(np.intp).max // 8:
            raise InvalidParameterError("grid exceeds the addressable range")

    @classmethod
    def from_box(cls, d: int, L: float, h: float) -> "Grid":
        n = int(round(L / h))
        if not math.isclose(n * h, L, rel_tol=1e-12):
            raise InvalidParameterError(f"L={L} is not a multiple of h={h}")
        return cls(d, n, h)

    @property
    def L(self) -> float:
        return self.n * self.h

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def centers_1d(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def radial_distance(self, origin) -> np.ndarray:
        """Periodic distance from ``origin`` to every cell center, shaped like the grid."""
        c = self.centers_1d()
        r2 = np.zeros(self.shape)
        for j in range(self.d):
            dx = c - origin[j]
            dx -= self.L * np.round(dx / self.L)
            sh = [1] * self.d
            sh[j] = self.n
            r2 = r2 + (dx ** 2).reshape(sh)
        return np.sqrt(r2)

    def summary(self) -> dict:
        return {"d": self.d, "n": self.n, "h": self.h, "L": self.L}


@dataclass(frozen=True, eq=False)
class Geometry:
    grid: Grid
    labels: np.ndarray  # grid-shaped int array; FLUID or inclusion index
    centers: np.ndarray  # (N, d) inclusion centers
    inclusion_cells: np.ndarray  # (N,) cell counts
    r_d: float

    @property
    def n_inclusions(self) -> int:
        return len(self.inclusion_cells)

    @property
    def inclusion_volume(self) -> np.ndarray:
        return self.inclusion_cells * self.grid.cell_volume

    @property
    def theta_h(self) -> float:
        return float(self.inclusion_cells.sum()) / self.grid.size

    @property
    def fluid_mask(self) -> np.ndarray:
        return self.labels == FLUID

    def summary(self) -> dict:
        out = self.grid.summary()
        out.update(inclusions=self.n_inclusions, theta_h=self.theta_h)
        return out


def empty_geometry(grid: Grid) -> Geometry:
    return Geometry(grid, np.full(grid.shape, FLUID, dtype=np.int64), np.empty((0, grid.d)),
                    np.zeros(0, dtype=np.int64), unit_ball_radius(grid.d))


def rasterize(ps: PointSet, grid: Grid, strict: bool = True) -> Geometry:
    """Label every cell whose center lies within periodic distance ``r_d`` of a point.

    With ``strict`` the hardcore and resolution preconditions
    (``rho >= sqrt(d) + 1``, ``h <= r_d / 2``) are enforced; coarse grids are
    allowed otherwise, as long as inclusions stay disjoint and non-adjacent.
    On coarse grids an inclusion may cover no cell center; its cell count is
    then zero, which keeps the expected count per inclusion at ``h**-d``.
    """
    d = grid.d
    if ps.d != d or not math.isclose(ps.L, grid.L, rel_tol=1e-12):
        raise PreconditionError("point set and grid describe different boxes")
    r = unit_ball_radius(d)
    if strict:
        if len(ps) > 1 and ps.rho < math.sqrt(d) + 1 - 1e-12:
            raise PreconditionError(f"rho={ps.rho} < sqrt(d)+1")
        if grid.h > r / 2 + 1e-12:
            raise PreconditionError(f"h={grid.h} exceeds r_d/2={r / 2:.4f}")
    labels = np.full(grid.size, FLUID, dtype=np.int64)
    counts = np.zeros(len(ps), dtype=np.int64)
    n, h = grid.n, grid.h
    reach = int(math.ceil(r / h)) + 1
    offsets = np.array(list(product(range(-reach, reach + 1), repeat=d)), dtype=np.int64)
    strides = n ** np.arange(d - 1, -1, -1, dtype=np.int64)
    pts = np.asarray(ps.points, dtype=float).reshape(-1, d)
    batch = max(1, 2_000_000 // len(offsets))
    for start in range(0, len(pts), batch):
        x = pts[start:start + batch]
        cells = np.floor(x / h - 0.5).astype(np.int64)[:, None, :] + offsets[None]
        inside = np.sum(((cells + 0.5) * h - x[:, None, :]) ** 2, axis=2) <= r * r
        owner = np.broadcast_to(np.arange(start, start + len(x))[:, None], inside.shape)[inside]
        flat = (cells[inside] % n) @ strides
        uniq, first = np.unique(flat, return_index=True)
        if len(uniq) < len(flat) or np.any(labels[flat] != FLUID):
            raise GeometryError("rasterized inclusions overlap")
        labels[flat] = owner
        counts[start:start + len(x)] = inside.sum(axis=1)
    if strict and np.any(counts == 0):
        raise GeometryError("an inclusion covers no cell center; grid too coarse")
    labels = labels.reshape(grid.shape)
    geom = Geometry(grid, labels, np.asarray(ps.points, dtype=float).reshape(-1, d), counts, r)
    if len(ps) > 1 and touching_pairs(geom):
        raise GeometryError("distinct inclusions share a cell face")
    return geom


def touching_pairs(geom: Geometry) -> int:
    """Number of face-adjacent cell pairs that belong to different inclusions."""
    lab = geom.labels
    total = 0
    for axis in range(lab.ndim):
        nb = np.roll(lab, -1, axis=axis)
        total += int(np.sum((lab != FLUID) & (nb != FLUID) & (lab != nb)))
    return total
