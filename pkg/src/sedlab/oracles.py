"""Independent reference solutions used to validate the lattice solver."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_banded

from .errors import InvalidParameterError, PreconditionError, SedlabError
from .solver import OperatorSpec, apply_operator

DENSE_DOF_LIMIT = 10_000


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class RadialProfile:
    radii: np.ndarray
    values: np.ndarray
    d: int
    T: float
    g1: float
    g2: float
    flux: str
    residual: float

    def __call__(self, r):
        """Interpolate in log r."""
        return np.interp(np.log(r), np.log(self.radii), self.values)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.radii, self.values]), delimiter=",",
                   header="r,v", comments="", fmt="%.17g")


def radial_massive_solve(d: int, T: float, R_out: float, g1: float, g2: float, m: int = 2000,
                         r_in: float = 1.0, flux: str = "total") -> RadialProfile:
    """Radial solution of ``(1/T) v - r^(1-d) (r^(d-1) v')' = g2`` on ``(r_in, R_out)``.

    The inner sphere carries the flux ``g1``: with ``flux="total"`` the
    integral of ``dv/dr`` over the sphere equals ``g1``, with ``flux="mean"``
    its average does.  The outer edge uses the screened decay condition
    ``v' = -v / sqrt(T)``.  Nodes are uniform in ``log r``; central differences
    are second order in the log spacing.
    """
    if d < 2:
        raise InvalidParameterError("radial solve needs d >= 2")
    if not R_out > r_in > 0:
        raise InvalidParameterError("need 0 < r_in < R_out")
    if m < 100:
        raise InvalidParameterError("need at least 100 nodes")
    if not T > 0:
        raise InvalidParameterError("T must be positive")
    if flux not in ("total", "mean"):
        raise InvalidParameterError(f"flux must be 'total' or 'mean', got {flux!r}")
    s = np.linspace(math.log(r_in), math.log(R_out), m)
    ds = s[1] - s[0]
    r = np.exp(s)
    # in s = log r: (r^2/T) v - v_ss - (d-2) v_s = r^2 g2
    lower = -1 / ds**2 + (d - 2) / (2 * ds)
    upper = -1 / ds**2 - (d - 2) / (2 * ds)
    diag = 2 / ds**2 + r**2 / T
    rhs = r**2 * g2
    ab = np.zeros((3, m))
    ab[0, 1:] = upper
    ab[1, :] = diag
    ab[2, :-1] = lower
    # inner ghost node from the flux: v_s(r_in) = q
    area = sphere_area(d) if flux == "total" else 1.0
    q = g1 / (area * r_in ** (d - 2))
    ab[0, 1] = upper + lower
    rhs = rhs.copy()
    rhs[0] += lower * 2 * ds * q
    # outer ghost node from v_s = -(R/sqrt(T)) v
    kappa = R_out / math.sqrt(T)
    ab[2, m - 2] = lower + upper
    ab[1, m - 1] = diag[-1] + upper * 2 * ds * kappa
    v = solve_banded((1, 1), ab, rhs)
    if not np.all(np.isfinite(v)):
        raise SedlabError("radial system is singular")
    interior = (r[1:-1] ** 2 / T) * v[1:-1] - (v[2:] - 2 * v[1:-1] + v[:-2]) / ds**2 \
        - (d - 2) * (v[2:] - v[:-2]) / (2 * ds) - r[1:-1] ** 2 * g2
    scale = max(np.max(np.abs(v)) / ds**2, np.max(np.abs(r**2 * g2)), 1e-300)
    return RadialProfile(r, v, d, float(T), float(g1), float(g2), flux,
                         float(np.max(np.abs(interior)) / scale))


def whole_space_green(d: int, T: float, r: float, m: int = 4000) -> float:
    """Massive Green's function of ``1/T - Lap`` in R^d at radius ``r``.

    Closed form in d = 3; otherwise a radial solve with unit point-source flux.
    """
    if r <= 0:
        raise InvalidParameterError("Green's function is singular at r = 0")
    if d == 3:
        return math.exp(-r / math.sqrt(T)) / (4 * math.pi * r)
    a = min(r, 1.0) * 1e-3
    R = max(8 * math.sqrt(T), 4 * r)
    prof = radial_massive_solve(d, T, R, g1=-1.0, g2=0.0, m=m, r_in=a)
    return float(prof(r))


def harmonic_annulus_profile(d: int, g1: float, g2: float, r):
    """Explicit radial profile solving ``-Lap v = g2`` outside the unit ball with ``v = 0`` on it.

    Exposed for comparison only: its normal derivative on the unit sphere is
    given by :func:`harmonic_annulus_flux` and does not equal ``g1`` in general.
    """
    r = np.asarray(r, dtype=float)
    c = -g1 + g2 / d
    return -g2 * r**2 / (2 * d) + c * (2 - d) / r ** (d - 2) + g2 / (2 * d) + (d - 2) * c


def harmonic_annulus_flux(d: int, g1: float, g2: float) -> float:
    """Radial derivative at ``r = 1`` of :func:`harmonic_annulus_profile`."""
    return -g2 / d + (d - 2) ** 2 * (-g1 + g2 / d)


def dense_matrix(spec: OperatorSpec) -> np.ndarray:
    n = spec.n_dofs
    if n > DENSE_DOF_LIMIT:
        raise PreconditionError(f"{n} DOFs exceed the dense budget of {DENSE_DOF_LIMIT}")
    A = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        A[:, j] = apply_operator(spec, e)
        e[j] = 0.0
    return A


def dense_direct_solve(spec: OperatorSpec, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve of the assembled operator."""
    A = dense_matrix(spec)
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return cho_solve(cho_factor(A), rhs)
