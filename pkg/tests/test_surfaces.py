import math

import numpy as np
import pytest
import sympy as sp

from esfem.errors import PointOutsideTube, UnknownProfile, UnsupportedSurface
from esfem.surfaces import (
    Circle,
    EllipsoidFlow,
    ScaledSphereFlow,
    Sphere,
    Torus,
    exact_heat_solution,
    forcing_profile,
    make_surface,
)

ALL_SURFACES = [
    Circle(),
    Sphere(),
    Torus(),
    ScaledSphereFlow(dimension=1),
    ScaledSphereFlow(dimension=2),
    EllipsoidFlow(dimension=2),
]


def test_closest_point_circle_example():
    res = Circle().closest_point(0.0, np.array([2.0, 0.0]))
    assert np.allclose(res.point, [1.0, 0.0], atol=1e-14)
    assert abs(res.signed_distance - 1.0) < 1e-14
    assert np.allclose(res.normal, [1.0, 0.0], atol=1e-14)


def test_closest_point_sphere_example():
    res = Sphere().closest_point(0.0, np.array([0.0, 0.0, 0.5]))
    assert np.allclose(res.point, [0.0, 0.0, 1.0], atol=1e-14)
    # interior point: distance 0.5, negative sign by the outward convention
    assert abs(abs(res.signed_distance) - 0.5) < 1e-14
    assert res.signed_distance < 0


def test_closest_point_torus_cross_section():
    # closed form in the x-z cross-section plane: tube center (2,0,0)
    res = Torus(2.0, 0.7).closest_point(0.0, np.array([2.9, 0.0, 0.0]))
    assert np.allclose(res.point, [2.7, 0.0, 0.0], atol=1e-14)
    assert abs(res.signed_distance - 0.2) < 1e-14


@pytest.mark.parametrize("surface", ALL_SURFACES, ids=lambda s: s.kind + str(s.dimension))
def test_projection_idempotent_and_aligned(surface):
    rng = np.random.default_rng(0)
    t = 0.3 if not surface.is_stationary else 0.0
    pts = surface.sample_points(t, 50, rng)
    again = surface.project(t, pts)
    assert np.abs(again - pts).max() <= 1e-12
    off = pts * 1.02 + 0.0
    q = surface.project(t, off)
    nu = surface.normal(t, q)
    diff = off - q
    cross = diff - np.sum(diff * nu, axis=-1, keepdims=True) * nu
    assert np.abs(cross).max() <= 1e-10 * (1 + np.abs(diff).max())


def test_point_outside_tube_errors():
    with pytest.raises(PointOutsideTube):
        Torus(2.0, 0.7).closest_point(0.0, np.array([0.1, 0.0, 0.0]))
    with pytest.raises(PointOutsideTube):
        Circle().closest_point(0.0, np.array([0.01, 0.0]))


@pytest.mark.parametrize("surface", ALL_SURFACES, ids=lambda s: s.kind + str(s.dimension))
def test_flow_map_identity_at_zero(surface):
    rng = np.random.default_rng(1)
    y = surface.sample_points(0.0, 20, rng)
    assert np.abs(surface.position(0.0, y) - y).max() <= 1e-14


@pytest.mark.parametrize(
    "surface",
    [ScaledSphereFlow(dimension=1), ScaledSphereFlow(dimension=2), EllipsoidFlow()],
    ids=["scaled1", "scaled2", "ellipsoid"],
)
def test_velocity_matches_flow_derivative(surface):
    rng = np.random.default_rng(2)
    y = surface.sample_points(0.0, 10, rng)
    horizon = surface.horizon
    step = 1e-4 * horizon
    for t in (0.1, 0.37, 0.8):
        x = surface.position(t, y)
        fd = (surface.position(t + step, y) - surface.position(t - step, y)) / (2 * step)
        assert np.abs(surface.velocity(t, x) - fd).max() <= 1e-6


def test_scaled_flow_velocity_identity():
    surface = ScaledSphereFlow(dimension=2)
    rng = np.random.default_rng(3)
    for t in (0.12, 0.5, 0.9):
        x = surface.sample_points(t, 10, rng)
        r = surface.radius(t)
        rp = surface.radius_rate(t)
        assert np.abs(surface.velocity(t, x) - (rp / r) * x).max() <= 1e-12


def test_flow_inverse_roundtrip():
    for surface in (ScaledSphereFlow(dimension=2), EllipsoidFlow()):
        rng = np.random.default_rng(4)
        y = surface.sample_points(0.0, 15, rng)
        x = surface.position(0.63, y)
        assert np.abs(surface.inverse_position(0.63, x) - y).max() <= 1e-12


def test_ellipsoid_projection_jacobian_vs_finite_differences():
    surface = EllipsoidFlow()
    x0 = np.array([1.1, 0.2, 0.45])
    t = 0.21
    jac = surface.projection_jacobian(t, x0)
    eps = 1e-6
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = eps
        col = (surface.project(t, x0 + dx) - surface.project(t, x0 - dx)) / (2 * eps)
        assert np.abs(jac[:, j] - col).max() <= 1e-8


# --- exact heat solutions -----------------------------------------------

def test_heat_solution_circle_examples():
    sol = exact_heat_solution(Circle(), 1)
    pt = np.array([math.cos(math.pi / 2), math.sin(math.pi / 2)])
    assert abs(sol.value(0.0, pt) - 1.0) < 1e-14
    assert sol.forcing(0.0, pt) == 0.0

    sol2 = exact_heat_solution(Circle(), 2)
    theta = 0.77
    pt = np.array([math.cos(theta), math.sin(theta)])
    assert abs(sol2.value(0.25, pt) - math.exp(-1.0) * math.sin(2 * theta)) < 1e-14


def test_heat_solution_sphere_example():
    sol = exact_heat_solution(Sphere(), 1)
    pt = np.array([0.1, 0.3, math.sqrt(1 - 0.1)])
    z = pt[2]
    assert abs(sol.value(0.5, pt) - math.exp(-1.0) * z) < 1e-14


def test_heat_solution_rejects_flows():
    with pytest.raises(UnsupportedSurface):
        exact_heat_solution(ScaledSphereFlow(), 1)
    with pytest.raises(UnsupportedSurface):
        exact_heat_solution(Torus(), 1)


def test_heat_solution_residual_symbolic_circle():
    # independent oracle: parametric Laplace-Beltrami on the circle is
    # (1/r^2) d^2/dtheta^2; the residual of the claimed solution must vanish
    t, theta = sp.symbols("t theta", real=True)
    for n in (1, 2, 3):
        u = sp.exp(-(n**2) * t) * sp.sin(n * theta)
        residual = sp.diff(u, t) - sp.diff(u, theta, 2)
        assert sp.simplify(residual) == 0
        # implementation agrees with the symbolic solution at random samples
        sol = exact_heat_solution(Circle(), n)
        rng = np.random.default_rng(10 + n)
        for _ in range(100):
            tv = rng.uniform(0, 1)
            av = rng.uniform(0, 2 * math.pi)
            pt = np.array([math.cos(av), math.sin(av)])
            expected = float(u.subs({t: tv, theta: av}))
            assert abs(sol.value(tv, pt) - expected) <= 1e-12


def test_heat_solution_residual_symbolic_sphere():
    # zonal Laplace-Beltrami: (1/sin phi) d/dphi (sin phi d/dphi)
    t, phi = sp.symbols("t phi", real=True)
    for ell in (1, 2):
        leg = sp.legendre(ell, sp.cos(phi))
        u = sp.exp(-ell * (ell + 1) * t) * leg
        lap = sp.diff(sp.sin(phi) * sp.diff(u, phi), phi) / sp.sin(phi)
        residual = sp.simplify(sp.diff(u, t) - lap)
        assert sp.simplify(residual) == 0
        sol = exact_heat_solution(Sphere(), ell)
        rng = np.random.default_rng(20 + ell)
        for _ in range(100):
            tv = rng.uniform(0, 1)
            pv = rng.uniform(0.1, math.pi - 0.1)
            av = rng.uniform(0, 2 * math.pi)
            pt = np.array(
                [math.sin(pv) * math.cos(av), math.sin(pv) * math.sin(av), math.cos(pv)]
            )
            expected = float(u.subs({t: tv, phi: pv}))
            assert abs(sol.value(tv, pt) - expected) <= 1e-12


# --- forcing profiles -----------------------------------------------------

def test_bump_profile_peaks_at_one():
    from esfem.surfaces import _bump_center

    for surface in ALL_SURFACES:
        f = forcing_profile("bump", surface)
        for t in (0.0, 0.3, 0.9):
            center = _bump_center(surface, t)
            assert abs(f(t, center[None, :])[0] - 1.0) < 1e-14


def test_zero_profile():
    f = forcing_profile("zero", Circle())
    assert np.all(f(0.5, np.ones((4, 2))) == 0.0)


def test_oscillator_profile_deterministic():
    surface = Sphere()
    f1 = forcing_profile("osc-seed42", surface)
    f2 = forcing_profile("osc-seed42", surface)
    rng = np.random.default_rng(0)
    pts = surface.sample_points(0.0, 30, rng)
    a = f1(0.37, pts)
    b = f2(0.37, pts)
    assert np.array_equal(a, b)
    # different seed gives a different field
    other = forcing_profile("osc-seed7", surface)(0.37, pts)
    assert not np.array_equal(a, other)


def test_unknown_profile_rejected():
    with pytest.raises(UnknownProfile):
        forcing_profile("mystery", Circle())
    with pytest.raises(UnknownProfile):
        forcing_profile("osc-seedXY", Circle())


def test_make_surface_factory():
    assert make_surface("circle", 1, (2.0,)).radius(0.0) == 2.0
    assert make_surface("torus", 2, (3.0, 0.5)).major == 3.0
    assert make_surface("scaled_sphere_flow", 2, ()).dimension == 2
    assert make_surface("ellipsoid_flow", 2, (0.1, 0.1, -0.1)).amplitudes == (0.1, 0.1, -0.1)
    with pytest.raises(UnsupportedSurface):
        make_surface("moebius", 2, ())
