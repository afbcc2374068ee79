"""Discrete massive corrector problem with inclusions merged into single unknowns.

The bilinear form is

    a(u, v) = (1/T) sum_{fluid c} u_c v_c h^d + sum_{edges (c, c')} (u_c' - u_c)(v_c' - v_c) h^(d-2)

on the periodic lattice, where every cell of inclusion ``i`` carries the same
unknown ``u_i``.  Fluid cells are numbered first (row-major), followed by one
unknown per inclusion.  The flux condition on each inclusion is the natural
condition of this form, so it is never discretized explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (DegenerateGeometryError, GeometryError, InvalidParameterError, NonConvergenceError,
                     PreconditionError, UndefinedStatisticError)
from .lattice import FLUID, Geometry, Grid
from .linearized import laplacian_symbol


class OperatorSpec:
    def __init__(self, geometry: Geometry, T: float):
        if not T > 0:
            raise InvalidParameterError(f"T must be positive, got {T}")
        if np.any(geometry.inclusion_cells == 0):
            raise GeometryError("an inclusion covers no cell; refine the grid")
        self.geometry = geometry
        self.grid: Grid = geometry.grid
        self.T = float(T)
        labels = geometry.labels.ravel()
        fluid = labels == FLUID
        self.fluid_index = np.flatnonzero(fluid)
        self.n_fluid = len(self.fluid_index)
        self.n_inclusions = geometry.n_inclusions
        self.inclusion_cell_index = np.flatnonzero(~fluid)
        self.inclusion_cell_label = labels[~fluid]
        dof_map = np.empty(labels.size, dtype=np.int64)
        dof_map[fluid] = np.arange(self.n_fluid)
        dof_map[~fluid] = self.n_fluid + labels[~fluid]
        dof_map.setflags(write=False)
        self.dof_map = dof_map
        h, d = self.grid.h, self.grid.d
        self.mass_weight = h**d / self.T
        self.edge_weight = h ** (d - 2)

    @property
    def n_dofs(self) -> int:
        return self.n_fluid + self.n_inclusions

    def to_cells(self, u: np.ndarray) -> np.ndarray:
        """Expand a DOF vector to a grid-shaped cell field."""
        return np.asarray(u)[self.dof_map].reshape(self.grid.shape)

    def restrict(self, cell_values: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`to_cells`: sum cell values into their DOFs."""
        flat = np.asarray(cell_values).ravel()
        out = np.empty(self.n_dofs)
        out[:self.n_fluid] = flat[self.fluid_index]
        out[self.n_fluid:] = np.bincount(self.inclusion_cell_label,
                                         weights=flat[self.inclusion_cell_index],
                                         minlength=self.n_inclusions)
        return out

    def diagonal(self) -> np.ndarray:
        d = self.grid.d
        cells = self.geometry.labels
        # edges to a cell of a different DOF contribute to the diagonal
        cut = np.zeros(self.grid.shape)
        for axis in range(d):
            for shift in (1, -1):
                nb = np.roll(cells, shift, axis=axis)
                cut += (nb != cells) | (cells == FLUID)
        diag = self.restrict(cut) * self.edge_weight
        diag[:self.n_fluid] += self.mass_weight
        return diag


def apply_operator(spec: OperatorSpec, u: np.ndarray) -> np.ndarray:
    """Riesz vector of ``a(u, .)``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n_dofs,):
        raise InvalidParameterError(f"field has shape {u.shape}, expected ({spec.n_dofs},)")
    cells = spec.to_cells(u)
    lap = 2 * spec.grid.d * cells
    for axis in range(spec.grid.d):
        lap -= np.roll(cells, 1, axis=axis)
        lap -= np.roll(cells, -1, axis=axis)
    out = spec.restrict(lap) * spec.edge_weight
    out[:spec.n_fluid] += spec.mass_weight * u[:spec.n_fluid]
    return out


def neutral_fluid_source(gbar: float, theta_h: float) -> float:
    if theta_h >= 1:
        raise DegenerateGeometryError("no fluid cells left (theta_h = 1)")
    return gbar * theta_h / (1 - theta_h)


def assemble_rhs(spec: OperatorSpec, gbar: float) -> np.ndarray:
    """Load vector of the neutral forcing: fluid source on fluid cells, sink ``-gbar`` on inclusions."""
    geom = spec.geometry
    g_theta = neutral_fluid_source(gbar, geom.theta_h)
    b = np.empty(spec.n_dofs)
    b[:spec.n_fluid] = g_theta * spec.grid.cell_volume
    b[spec.n_fluid:] = -gbar * geom.inclusion_volume
    return b


@dataclass
class CGInfo:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


def conjugate_gradient(apply: Callable, b: np.ndarray, tol: float = 1e-10, maxit: int = 1000,
                       precond: Optional[Callable] = None, x0: Optional[np.ndarray] = None):
    """Preconditioned CG on ``apply(x) = b``; stops on the true relative residual.

    Returns ``(x, CGInfo)``.  A zero right-hand side returns ``x = 0`` after
    zero iterations.
    """
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0:
        return np.zeros_like(b), CGInfo(0, 0.0, True)
    it = 0
    history = []
    while True:
        r = b - apply(x)
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, CGInfo(it, rel, True, history)
        if it >= maxit:
            return x, CGInfo(it, rel, False, history)
        # inner CG sweep on the recursive residual; restarts absorb round-off drift
        z = precond(r) if precond else r
        p = z.copy()
        rz = r @ z
        while it < maxit:
            Ap = apply(p)
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rel = np.linalg.norm(r) / bnorm
            history.append(rel)
            if rel <= 0.5 * tol:
                break
            z = precond(r) if precond else r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new


@dataclass
class SolveResult:
    u: np.ndarray
    inclusion_values: np.ndarray
    iterations: int
    residual: float
    energy_massive: float
    energy_dirichlet: float

    @property
    def energy(self) -> float:
        return self.energy_massive + self.energy_dirichlet

    def report(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "energy_massive": self.energy_massive,
                "energy_dirichlet": self.energy_dirichlet}


def energies(spec: OperatorSpec, u: np.ndarray) -> tuple[float, float]:
    """``((1/T) sum_fluid u^2 h^d, sum_edges (du)^2 h^(d-2))``."""
    massive = spec.mass_weight * float(u[:spec.n_fluid] @ u[:spec.n_fluid])
    cells = spec.to_cells(u)
    dirichlet = 0.0
    for axis in range(spec.grid.d):
        diff = np.roll(cells, -1, axis=axis) - cells
        dirichlet += float(np.sum(diff * diff))
    return massive, dirichlet * spec.edge_weight


def make_preconditioner(spec: OperatorSpec, kind: str):
    if kind in (None, "none"):
        return None
    if kind == "jacobi":
        inv = 1.0 / spec.diagonal()
        return lambda r: inv * r
    if kind == "spectral":
        # W^T F^{-1} W with F the inclusion-free operator and W averaging over inclusion cells
        grid = spec.grid
        axes = tuple(range(grid.d))
        symbol = grid.cell_volume * (1.0 / spec.T + laplacian_symbol(grid))
        weight = np.concatenate([np.ones(spec.n_fluid), 1.0 / spec.geometry.inclusion_cells])

        def precond(r):
            c = spec.to_cells(r * weight)
            z = np.fft.irfftn(np.fft.rfftn(c, axes=axes) / symbol, s=grid.shape, axes=axes)
            return spec.restrict(z) * weight
        return precond
    raise InvalidParameterError(f"unknown preconditioner {kind!r}")


def _solve(spec, b, tol, maxit, preconditioner, what):
    if not 0 < tol < 1:
        raise InvalidParameterError(f"tol must lie in (0, 1), got {tol}")
    if spec.n_fluid == 0:
        raise DegenerateGeometryError("operator is singular without fluid cells")
    if maxit is None:
        maxit = 50 * spec.grid.n
    x, info = conjugate_gradient(lambda v: apply_operator(spec, v), b, tol, maxit,
                                 make_preconditioner(spec, preconditioner))
    em, ed = energies(spec, x)
    res = SolveResult(x, x[spec.n_fluid:].copy(), info.iterations, info.residual, em, ed)
    if not info.converged:
        raise NonConvergenceError(
            f"{what}: CG stopped after {info.iterations} iterations at residual {info.residual:.3e}",
            res)
    return res


def solve_corrector(spec: OperatorSpec, gbar: float = 1.0, tol: float = 1e-10,
                    maxit: Optional[int] = None, preconditioner: str = "none") -> SolveResult:
    """Solve ``a(u, v) = l(v)`` for the neutral inclusion forcing by CG."""
    return _solve(spec, assemble_rhs(spec, gbar), tol, maxit, preconditioner, "corrector solve")


def fluid_mass(spec: OperatorSpec, u: np.ndarray) -> float:
    """``sum_fluid u h^d``; vanishes for the exact corrector."""
    return float(np.sum(u[:spec.n_fluid])) * spec.grid.cell_volume


def identity_defects(spec: OperatorSpec, res: SolveResult, gbar: float) -> dict:
    """Relative defects of the fluid-mean-zero and energy identities."""
    u = res.u
    vol = spec.grid.L ** spec.grid.d
    l2 = math.sqrt(float(u @ (u * dof_volumes(spec))))
    mass = fluid_mass(spec, u)
    a_uu = res.energy
    work = gbar * float(res.inclusion_values @ spec.geometry.inclusion_volume)
    return {
        "fluid_mass": mass,
        "mean0": abs(mass) / (l2 * math.sqrt(vol)) if l2 > 0 else 0.0,
        "energy_gap": a_uu + work,
        "energy": abs(a_uu + work) / a_uu if a_uu > 0 else abs(work),
    }


def dof_volumes(spec: OperatorSpec) -> np.ndarray:
    w = np.empty(spec.n_dofs)
    w[:spec.n_fluid] = spec.grid.cell_volume
    w[spec.n_fluid:] = spec.geometry.inclusion_volume
    return w


def effective_field_box(res: SolveResult, geometry: Geometry) -> float:
    """Volume-weighted mean of the inclusion values."""
    if geometry.n_inclusions == 0:
        raise UndefinedStatisticError("effective field needs at least one inclusion")
    vol = geometry.inclusion_volume
    return float(res.inclusion_values @ vol / vol.sum())


def _flat_cell(grid: Grid, cell) -> int:
    if np.ndim(cell) == 0:
        return int(cell)
    return int(np.ravel_multi_index(tuple(int(c) for c in cell), grid.shape))


def green_function(spec: OperatorSpec, source_cell, tol: float = 1e-10,
                   maxit: Optional[int] = None, preconditioner: str = "none",
                   min_distance: float = 2.0) -> np.ndarray:
    """Obstacle Green's function with a unit point source at a fluid cell.

    Solves ``a(G, v) = v(source)``: zero net flux through every inclusion.
    """
    grid, geom = spec.grid, spec.geometry
    flat = _flat_cell(grid, source_cell)
    if geom.labels.ravel()[flat] != FLUID:
        raise PreconditionError("source cell lies inside an inclusion")
    center = (np.array(np.unravel_index(flat, grid.shape)) + 0.5) * grid.h
    if geom.n_inclusions:
        dx = geom.centers - center
        dx -= grid.L * np.round(dx / grid.L)
        if np.min(np.linalg.norm(dx, axis=1)) < min_distance:
            raise PreconditionError(f"source within distance {min_distance} of an inclusion")
    b = np.zeros(spec.n_dofs)
    b[spec.dof_map[flat]] = 1.0
    return _solve(spec, b, tol, maxit, preconditioner, "green solve").u


def shell_average(values: np.ndarray, grid: Grid, origin, edges) -> tuple[np.ndarray, np.ndarray]:
    """Mean of a cell field over periodic spherical shells around ``origin``.

    Returns ``(mean radius, mean value)`` for every nonempty shell.
    """
    r = grid.radial_distance(origin).ravel()
    v = np.asarray(values).ravel()
    which = np.digitize(r, edges) - 1
    ok = (which >= 0) & (which < len(edges) - 1)
    count = np.bincount(which[ok], minlength=len(edges) - 1)
    rsum = np.bincount(which[ok], weights=r[ok], minlength=len(edges) - 1)
    vsum = np.bincount(which[ok], weights=v[ok], minlength=len(edges) - 1)
    keep = count > 0
    return rsum[keep] / count[keep], vsum[keep] / count[keep]


def green_decay_slope(spec: OperatorSpec, G: np.ndarray, source_cell, r_min: float,
                      r_max: float, shells: int = 20) -> float:
    """Least-squares slope of log(shell-averaged |G|) against log r on ``[r_min, r_max]``."""
    grid = spec.grid
    flat = _flat_cell(grid, source_cell)
    origin = (np.array(np.unravel_index(flat, grid.shape)) + 0.5) * grid.h
    edges = np.linspace(r_min, r_max, shells + 1)
    r, g = shell_average(np.abs(spec.to_cells(G)), grid, origin, edges)
    return float(np.polyfit(np.log(r), np.log(g), 1)[0])
