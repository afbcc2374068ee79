"""Hardcore point processes on a periodic box via the Penrose graphical construction.

Candidates are a unit-intensity Poisson process on ``[0, L)^d x [0, inf)``,
streamed in increasing mark (arrival time) order.  The hardcore Poisson
process of parameters ``(rho, lam)`` keeps the candidates with mark ``<= lam``
that survive the sequential acceptance rule; random parking runs the same
stream until saturation.  Because the stream does not depend on ``lam``,
processes sharing a seed are nested.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExceededError, InvalidParameterError

# candidates drawn per RNG block; fixed so the stream is independent of lambda
_BLOCK = 8192


@dataclass(frozen=True)
class MarkedCandidates:
    points: np.ndarray  # (N, d)
    marks: np.ndarray  # (N,)
    L: float
    d: int
    lam: float
    seed: int

    def __post_init__(self):
        if self.points.shape != (len(self.marks), self.d):
            raise InvalidParameterError("points and marks must have matching length")


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # (N, d), coordinates in [0, L)
    rho: float
    L: float
    d: int
    seed: int
    kind: str  # "hardcore_poisson" or "random_parking"
    lam: Optional[float] = None
    achieved_horizon: Optional[float] = None
    candidates_used: int = 0
    saturated: bool = True

    def __len__(self):
        return len(self.points)

    @property
    def intensity(self) -> float:
        return len(self.points) / self.L**self.d

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "L": self.L,
            "rho": self.rho,
            "lambda": self.lam,
            "seed": self.seed,
            "count": len(self.points),
            "achieved_horizon": self.achieved_horizon,
        }


@dataclass(frozen=True)
class StopRule:
    """Saturation rule for random parking.

    Generation stops at the first of: mark ``horizon`` reached, or ``streak``
    consecutive rejected candidates.  ``streak=None`` means ``10 * L**d``.
    Exceeding ``budget`` candidates raises :class:`BudgetExceededError`.
    """

    horizon: Optional[float] = None
    streak: Optional[int] = None
    budget: int = 200_000_000


def _check_box(d, L):
    if int(d) != d or d < 1:
        raise InvalidParameterError(f"dimension must be a positive integer, got {d}")
    if not L > 0:
        raise InvalidParameterError(f"box side must be positive, got {L}")


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _candidate_stream(d: int, L: float, seed: int):
    """Yield ``(points, marks)`` blocks of the space-time Poisson process in mark order."""
    volume = float(L) ** d
    t = 0.0
    block = 0
    while True:
        rng = _block_rng(seed, block)
        gaps = rng.exponential(1.0 / volume, size=_BLOCK)
        pts = rng.random((_BLOCK, d)) * L
        # guard the half-open box against round-up at L
        pts[pts >= L] = 0.0
        marks = t + np.cumsum(gaps)
        t = marks[-1]
        block += 1
        yield pts, marks


def sample_poisson_marks(d: int, L: float, lam: float, seed: int) -> MarkedCandidates:
    """Candidates of the unit-intensity Poisson process on ``[0, L)^d x [0, lam]``."""
    _check_box(d, L)
    if not lam >= 0:
        raise InvalidParameterError(f"time horizon must be nonnegative, got {lam}")
    pts, marks = [], []
    if lam > 0:
        for p, m in _candidate_stream(d, L, seed):
            keep = m <= lam
            pts.append(p[keep])
            marks.append(m[keep])
            if not keep[-1]:
                break
    points = np.concatenate(pts) if pts else np.empty((0, d))
    marks_arr = np.concatenate(marks) if marks else np.empty(0)
    return MarkedCandidates(points, marks_arr, float(L), int(d), float(lam), int(seed))


def periodic_displacement(x, y, L):
    """Coordinate-wise minimal-image displacement ``y - x``."""
    dx = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return dx - L * np.round(dx / L)


def min_pairwise_distance(ps: PointSet) -> float:
    """Minimum periodic distance over unordered pairs; ``inf`` for fewer than two points."""
    pts = np.asarray(ps.points, dtype=float)
    if len(pts) < 2:
        return float("inf")
    tree = cKDTree(pts, boxsize=ps.L)
    dist, _ = tree.query(pts, k=2)
    return float(dist[:, 1].min())


class _Acceptor:
    """Sequential Penrose acceptance against a growing set of accepted points.

    Accepted points live in a large KD-tree rebuilt geometrically plus a small
    tree of recent acceptances, so rebuild work stays O(N log N) overall.
    """

    def __init__(self, d: int, L: float, rho: float):
        self.d, self.L, self.rho = d, float(L), float(rho)
        self.accepted: list[np.ndarray] = []
        self.count = 0
        self._main = None
        self._main_size = 0
        self._recent = None
        self._recent_size = 0

    def _all(self) -> np.ndarray:
        if not self.accepted:
            return np.empty((0, self.d))
        if len(self.accepted) > 1:
            self.accepted = [np.concatenate(self.accepted)]
        return self.accepted[0]

    def _bound(self):
        return self.rho * (1 + 1e-9) + 1e-12

    def _blocked_by_accepted(self, pts: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.zeros(len(pts), dtype=bool)
        pending = self.count - self._main_size
        if self._main is None or pending > max(4096, self._main_size // 4):
            self._main = cKDTree(self._all(), boxsize=self.L)
            self._main_size = self.count
            self._recent, self._recent_size = None, 0
            pending = 0
        dist, _ = self._main.query(pts, k=1, distance_upper_bound=self._bound())
        blocked = dist < self.rho
        if pending:
            if self._recent is None or self._recent_size != pending:
                self._recent = cKDTree(self._all()[self._main_size:], boxsize=self.L)
                self._recent_size = pending
            free = np.flatnonzero(~blocked)
            if len(free):
                dist, _ = self._recent.query(pts[free], k=1, distance_upper_bound=self._bound())
                blocked[free[dist < self.rho]] = True
        return blocked

    def feed(self, pts: np.ndarray) -> np.ndarray:
        """Process ``pts`` (already in acceptance order); return the accepted mask."""
        pts = np.ascontiguousarray(pts, dtype=float)
        mask = ~self._blocked_by_accepted(pts)
        idx = np.flatnonzero(mask)
        if len(idx) > 1:
            sub = cKDTree(pts[idx], boxsize=self.L)
            pairs = sub.query_pairs(self._bound(), output_type="ndarray")
            if len(pairs):
                a, b = pairs[:, 0], pairs[:, 1]
                dist = np.linalg.norm(periodic_displacement(pts[idx[a]], pts[idx[b]], self.L), axis=1)
                close = dist < self.rho
                a, b = a[close], b[close]
                # each conflict is charged to the later candidate
                later = np.maximum(a, b)
                earlier = np.minimum(a, b)
                order = np.argsort(later, kind="stable")
                later, earlier = later[order], earlier[order]
                starts = np.searchsorted(later, np.arange(len(idx)))
                ends = np.searchsorted(later, np.arange(len(idx)), side="right")
                keep = np.ones(len(idx), dtype=bool)
                for j in np.flatnonzero(ends > starts):
                    if keep[earlier[starts[j]:ends[j]]].any():
                        keep[j] = False
                mask[idx[~keep]] = False
        new = pts[mask]
        if len(new):
            self.accepted.append(new)
            self.count += len(new)
        return mask


def _acceptance_order(points: np.ndarray, marks: np.ndarray) -> np.ndarray:
    keys = [points[:, j] for j in range(points.shape[1] - 1, -1, -1)] + [marks]
    return np.lexsort(keys)


def penrose_accept(candidates: MarkedCandidates, rho: float) -> PointSet:
    """Keep a candidate iff every conflicting candidate with an earlier mark was rejected.

    Ties in marks are broken by lexicographic coordinate order, so the result
    does not depend on the order of the candidate list.
    """
    if not rho > 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    pts = np.asarray(candidates.points, dtype=float).reshape(-1, candidates.d)
    marks = np.asarray(candidates.marks, dtype=float)
    order = _acceptance_order(pts, marks)
    acc = _Acceptor(candidates.d, candidates.L, rho)
    for start in range(0, len(order), _BLOCK):
        acc.feed(pts[order[start:start + _BLOCK]])
    return PointSet(
        acc._all().copy(), float(rho), candidates.L, candidates.d, candidates.seed,
        "hardcore_poisson", lam=candidates.lam, achieved_horizon=candidates.lam,
        candidates_used=len(marks),
    )


def sample_hardcore_poisson(d: int, L: float, rho: float, lam: float, seed: int) -> PointSet:
    """Hardcore Poisson process of parameters ``(rho, lam)`` in the periodic box."""
    return penrose_accept(sample_poisson_marks(d, L, lam, seed), rho)


def sample_random_parking(d: int, L: float, rho: float, seed: int,
                          stop: Optional[StopRule] = None) -> PointSet:
    """Random parking (jammed) configuration, approximated by a saturation rule."""
    _check_box(d, L)
    if not rho > 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    stop = stop or StopRule()
    streak_target = stop.streak if stop.streak is not None else int(10 * L**d)
    acc = _Acceptor(d, L, rho)
    streak = 0
    used = 0
    horizon = 0.0
    for pts, marks in _candidate_stream(d, L, seed):
        if stop.horizon is not None and marks[0] > stop.horizon:
            break
        if stop.horizon is not None:
            keep = marks <= stop.horizon
            pts, marks = pts[keep], marks[keep]
        mask = acc.feed(pts)
        hits = np.flatnonzero(mask)
        if len(hits):
            streak = len(mask) - 1 - hits[-1]
        else:
            streak += len(mask)
        used += len(mask)
        horizon = float(marks[-1]) if len(marks) else horizon
        if streak >= streak_target:
            # trim the horizon to the candidate that completed the streak
            excess = streak - streak_target
            horizon = float(marks[len(marks) - 1 - excess])
            used -= excess
            break
        if stop.horizon is not None and len(marks) < _BLOCK:
            horizon = stop.horizon
            break
        if used > stop.budget:
            partial = PointSet(acc._all().copy(), float(rho), float(L), int(d), int(seed),
                               "random_parking", achieved_horizon=horizon,
                               candidates_used=used, saturated=False)
            raise BudgetExceededError(
                f"random parking used {used} candidates without saturating", partial)
    return PointSet(acc._all().copy(), float(rho), float(L), int(d), int(seed),
                    "random_parking", achieved_horizon=horizon, candidates_used=used,
                    saturated=streak >= streak_target)


def estimate_jamming(d: int, L: float, rho: float, seed: int,
                     stop: Optional[StopRule] = None) -> float:
    """Jamming constant estimate ``intensity * rho**d`` from one parking run."""
    ps = sample_random_parking(d, L, rho, seed, stop)
    return ps.intensity * rho**d
