import math

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from conftest import manual_points
from sedlab.errors import InvalidParameterError, PreconditionError
from sedlab.lattice import Grid, rasterize
from sedlab.oracles import (dense_direct_solve, dense_matrix, harmonic_annulus_flux,
                            harmonic_annulus_profile, radial_massive_solve, sphere_area,
                            whole_space_green)
from sedlab.solver import OperatorSpec, apply_operator, assemble_rhs, solve_corrector


def test_sphere_area():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_radial_zero_data():
    prof = radial_massive_solve(3, 10.0, 30.0, 0.0, 0.0)
    assert not np.any(prof.values)


def test_radial_flux_condition():
    for flux, area in (("total", 4 * math.pi), ("mean", 1.0)):
        prof = radial_massive_solve(3, 100.0, 80.0, 2.0, 0.0, m=4000, flux=flux)
        r, v = prof.radii, prof.values
        dv = (-3 * v[0] + 4 * v[1] - v[2]) / (r[1] - r[0]) / 2 * (r[1] - r[0]) / (r[2] - r[0]) * 2
        assert dv * area == pytest.approx(2.0, rel=1e-2)
        assert v[0] < 0  # positive outward flux pulls the field down near the sphere


def test_radial_laplace_limit_is_coulomb():
    prof = radial_massive_solve(3, 1e6, 8000.0, 1.0, 0.0, m=4000)
    r = np.linspace(2.0, 50.0, 40)
    v = prof(r)
    A = np.column_stack([1 / r, np.ones_like(r)])
    (a, b), *_ = np.linalg.lstsq(A, v, rcond=None)
    assert a == pytest.approx(-1 / (4 * math.pi), rel=1e-2)
    assert np.max(np.abs(r * (v - b) / a - 1)) <= 1e-2


def test_radial_self_convergence():
    r = np.linspace(1.5, 20.0, 50)
    profs = [radial_massive_solve(3, 100.0, 80.0, 1.0, 0.5, m=m)(r) for m in (500, 1000, 2000)]
    e1 = np.max(np.abs(profs[0] - profs[1]))
    e2 = np.max(np.abs(profs[1] - profs[2]))
    assert 3.0 < e1 / e2 < 5.0


def test_radial_residual_and_csv(tmp_path):
    prof = radial_massive_solve(3, 100.0, 80.0, 1.0, 0.0)
    assert prof.residual < 1e-12
    prof.to_csv(tmp_path / "r.csv")
    data = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], prof.radii) and np.array_equal(data[:, 1], prof.values)


def test_radial_bad_parameters():
    with pytest.raises(InvalidParameterError):
        radial_massive_solve(3, 1.0, 0.5, 1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        radial_massive_solve(3, 1.0, 5.0, 1.0, 0.0, flux="net")


def test_radial_field_solves_lattice_operator_as_h_shrinks():
    # embed the radial profile on a 3D grid; the discrete residual away from the sphere is O(h^2)
    T = 100.0
    prof = radial_massive_solve(3, T, 80.0, 1.0, 0.0, m=8000)
    spline = CubicSpline(np.log(prof.radii), prof.values)
    worst = []
    for h in (0.25, 0.125):
        x = np.arange(-4.0, 4.0 + h / 2, h)
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        v = spline(np.log(np.maximum(np.sqrt(X**2 + Y**2 + Z**2), 1.0)))
        lap = sum(np.roll(v, s, axis=a) for a in range(3) for s in (1, -1)) - 6 * v
        res = v / T - lap / h**2
        R = np.sqrt(X**2 + Y**2 + Z**2)
        band = (R >= 2.0) & (R <= 3.0)
        worst.append(np.max(np.abs(res[band])) / np.max(np.abs(v[band])))
    assert worst[1] < worst[0] / 3
    assert worst[1] < 1e-2


def test_whole_space_green_closed_forms():
    assert whole_space_green(3, 1e12, 1.0) == pytest.approx(1 / (4 * math.pi), rel=1e-5)
    assert whole_space_green(3, 1.0, 2.0) == pytest.approx(math.exp(-2) / (8 * math.pi), rel=1e-14)
    with pytest.raises(InvalidParameterError):
        whole_space_green(3, 1.0, 0.0)


def test_radial_point_source_matches_closed_form_d3():
    T = 100.0
    prof = radial_massive_solve(3, T, 80.0, -1.0, 0.0, m=4000, r_in=1e-3)
    for r in (0.5, 2.0, 5.0):
        assert prof(r) == pytest.approx(whole_space_green(3, T, r), rel=1e-3)


def test_whole_space_green_d4_slope():
    T = 1600.0
    r = np.geomspace(1.0, math.sqrt(T) / 4, 8)
    g = [whole_space_green(4, T, x) for x in r]
    slope = np.polyfit(np.log(r), np.log(g), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.1)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_harmonic_annulus(d):
    g1, g2 = 0.7, 0.3
    assert harmonic_annulus_profile(d, g1, g2, 1.0) == pytest.approx(0.0, abs=1e-14)
    eps = 1e-6
    dv = (harmonic_annulus_profile(d, g1, g2, 1 + eps) - harmonic_annulus_profile(d, g1, g2, 1 - eps)) / (2 * eps)
    assert dv == pytest.approx(harmonic_annulus_flux(d, g1, g2), rel=1e-6)
    # -Lap v = g2 in radial form
    r = 1.7
    f = lambda x: harmonic_annulus_profile(d, g1, g2, x)
    v1 = (f(r + 1e-4) - f(r - 1e-4)) / 2e-4
    v2 = (f(r + 1e-4) - 2 * f(r) + f(r - 1e-4)) / 1e-8
    assert -(v2 + (d - 1) / r * v1) == pytest.approx(g2, rel=1e-4)


def test_harmonic_annulus_flux_sign_d3():
    # the explicit profile carries flux -g1 in d=3; it is kept for display only
    assert harmonic_annulus_flux(3, 1.0, 0.0) == -1.0


def test_dense_matrix_symmetric_positive(tiny2d):
    spec = OperatorSpec(tiny2d, 5.0)
    A = dense_matrix(spec)
    assert np.max(np.abs(A - A.T)) <= 1e-13
    # inverse power iteration for the smallest eigenvalue
    x = np.ones(len(A))
    for _ in range(200):
        x = np.linalg.solve(A, x)
        x /= np.linalg.norm(x)
    assert x @ A @ x > 0
    assert x @ A @ x == pytest.approx(np.linalg.eigvalsh(A)[0], rel=1e-6)


def test_dense_solve(tiny2d):
    spec = OperatorSpec(tiny2d, 5.0)
    b = assemble_rhs(spec, 1.0)
    u = dense_direct_solve(spec, b)
    assert np.max(np.abs(apply_operator(spec, u) - b)) <= 1e-11 * max(1.0, np.max(np.abs(b)))
    cg = solve_corrector(spec, 1.0, 1e-12).u
    assert np.linalg.norm(cg - u) <= 1e-8 * np.linalg.norm(u)
    assert not np.any(dense_direct_solve(spec, np.zeros(spec.n_dofs)))


def test_dense_random_geometries():
    rng = np.random.default_rng(5)
    for _ in range(5):
        g = Grid(2, 8, 0.25)
        spec = OperatorSpec(rasterize(manual_points([rng.random(2) * g.L], g.L), g, strict=False),
                            float(rng.uniform(1, 100)))
        b = assemble_rhs(spec, 1.0)
        u = dense_direct_solve(spec, b)
        cg = solve_corrector(spec, 1.0, 1e-12).u
        assert np.linalg.norm(cg - u) <= 1e-8 * np.linalg.norm(u)


def test_dense_limit():
    g = Grid(3, 32, 0.25)
    spec = OperatorSpec(rasterize(manual_points([[4.0, 4.0, 4.0]], g.L), g), 1.0)
    with pytest.raises(PreconditionError):
        dense_matrix(spec)
