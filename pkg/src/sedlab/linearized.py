"""Spectral solvers for the linearized screened models on the periodic lattice.

Both models solve ``(1/T - Lap_h) v = s`` cell-wise, where ``Lap_h`` is the
same (2d+1)-point stencil the corrector solver uses, so FFT and CG results are
directly comparable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, PreconditionError
from .lattice import FLUID, Geometry, Grid


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid
    values: np.ndarray  # grid-shaped

    def mean(self) -> float:
        return float(self.values.mean())


def laplacian_symbol(grid: Grid, half: bool = True) -> np.ndarray:
    """Eigenvalues ``(4/h^2) sum_j sin^2(pi k_j / n)`` of ``-Lap_h``, broadcast to rfft layout."""
    n, d = grid.n, grid.d
    s = (4.0 / grid.h**2) * np.sin(np.pi * np.arange(n) / n) ** 2
    sigma = np.zeros([1] * d)
    for j in range(d):
        m = n // 2 + 1 if (half and j == d - 1) else n
        shape = [1] * d
        shape[j] = m
        sigma = sigma + s[:m].reshape(shape)
    return sigma


def _axes(grid):
    return tuple(range(grid.d))


def screened_solve(grid: Grid, source: np.ndarray, T: float) -> np.ndarray:
    """Solve ``(1/T - Lap_h) v = source`` on the periodic grid."""
    if not T > 0:
        raise InvalidParameterError(f"T must be positive, got {T}")
    source = np.asarray(source, dtype=float)
    if source.shape != grid.shape:
        raise PreconditionError(f"source shape {source.shape} does not match grid {grid.shape}")
    axes = _axes(grid)
    spec = np.fft.rfftn(source, axes=axes)
    spec /= 1.0 / T + laplacian_symbol(grid)
    return np.fft.irfftn(spec, s=grid.shape, axes=axes)


def _check(grid: Grid, geometry: Geometry):
    if geometry.grid != grid:
        raise PreconditionError("geometry lives on a different grid")


def indicator_source(geometry: Geometry) -> np.ndarray:
    """``1_B - theta_h``: exactly mean-zero cell field."""
    ind = (geometry.labels != FLUID).astype(float)
    return ind - geometry.theta_h


def solve_linearized_fft(grid: Grid, geometry: Geometry, T: float) -> SpectralField:
    """Linearized model with the centered inclusion indicator as source."""
    _check(grid, geometry)
    return SpectralField(grid, screened_solve(grid, indicator_source(geometry), T))


def forward_gradient(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(values, -1, axis=axis) - values) / h


def backward_divergence(component: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Negative adjoint of :func:`forward_gradient` along ``axis``."""
    return (component - np.roll(component, 1, axis=axis)) / h


def divform_source(geometry: Geometry, direction: int) -> np.ndarray:
    ind = (geometry.labels != FLUID).astype(float)
    return backward_divergence(ind, geometry.grid.h, direction)


def solve_divform_fft(grid: Grid, geometry: Geometry, T: float, direction: int = 0) -> SpectralField:
    """Divergence-form model with source ``div(1_B e)`` along coordinate ``direction``."""
    _check(grid, geometry)
    if not 0 <= direction < grid.d:
        raise InvalidParameterError(f"direction {direction} out of range for d={grid.d}")
    return SpectralField(grid, screened_solve(grid, divform_source(geometry, direction), T))


def coulomb_energy(v: SpectralField, grid: Grid, T: float) -> dict:
    """Box averages of ``(1/T) v^2`` and ``|grad v|^2`` (forward differences)."""
    vals = v.values
    massive = float(np.mean(vals * vals)) / T
    dirichlet = 0.0
    for axis in range(grid.d):
        g = forward_gradient(vals, grid.h, axis)
        dirichlet += float(np.mean(g * g))
    return {"massive": massive, "dirichlet": dirichlet}


def spectral_mean_square(v: SpectralField) -> float:
    """Box average of ``v^2`` computed from Fourier coefficients."""
    coeff = np.fft.fftn(v.values)
    return float(np.sum(np.abs(coeff) ** 2)) / v.values.size**2
