"""Analytic closed surfaces, prescribed flows, and verification solution families.

Every surface kind here has a closed-form outward normal and a closest-point
projection that is either closed-form (circle, sphere, torus) or obtained by a
damped Newton iteration on the Lagrange condition (ellipsoid).  All point-wise
operations accept arrays of points with shape ``(..., d)`` where
``d = dimension + 1`` is the ambient dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    NonConvergence,
    PointOutsideTube,
    UnknownProfile,
    UnsupportedSurface,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ClosestPointResult:
    """Projection of an off-surface point: foot point, signed distance, normal."""

    point: np.ndarray
    signed_distance: float
    normal: np.ndarray


class Surface:
    """Base class for closed hypersurfaces of dimension ``m`` in R^(m+1).

    Subclasses provide the implicit equation, projection, normals and (for
    evolving kinds) the flow map and its velocity.  The default flow is the
    identity (stationary surface).
    """

    kind = "abstract"
    is_stationary = True

    def __init__(self, dimension, horizon=1.0):
        self.dimension = int(dimension)
        self.ambient_dim = self.dimension + 1
        self.horizon = float(horizon)

    # -- implicit description -------------------------------------------------

    def implicit(self, t, x):
        """Residual of the implicit surface equation; zero on the surface."""
        raise NotImplementedError

    def project(self, t, x):
        """Closest-point projection onto the surface at time ``t`` (vectorized)."""
        raise NotImplementedError

    def normal(self, t, x):
        """Outward unit normal at points on (or near) the surface."""
        raise NotImplementedError

    def projection_jacobian(self, t, x):
        """Jacobian dq/dx of the closest-point projection, shape (..., d, d)."""
        raise NotImplementedError

    def tube_radius(self, t=0.0):
        """Half-width of the tube in which the projection is certified unique."""
        raise NotImplementedError

    # -- flow map --------------------------------------------------------------

    def position(self, t, y):
        """Flow map: position at time ``t`` of the material point ``y`` on the
        initial surface."""
        return np.asarray(y, dtype=float)

    def inverse_position(self, t, x):
        """Inverse flow map: initial position of the point ``x`` at time ``t``."""
        return np.asarray(x, dtype=float)

    def velocity(self, t, x):
        """Material velocity at the on-surface point ``x`` at time ``t``."""
        return np.zeros_like(np.asarray(x, dtype=float))

    # -- analytic helpers --------------------------------------------------------

    def measure(self, t=0.0):
        """Surface measure |Gamma(t)|, when known in closed form."""
        raise UnsupportedSurface(f"no closed-form measure for kind {self.kind!r}")

    def geodesic_distance(self, t, x, y):
        raise UnsupportedSurface(f"no geodesic distance for kind {self.kind!r}")

    def parametric_quadrature(self, t, order):
        """Quadrature (points, weights) on the exact surface, independent of any
        mesh.  Only available for kinds with a global smooth parametrization."""
        raise UnsupportedSurface(f"no parametric quadrature for kind {self.kind!r}")

    def sample_points(self, t, n, rng):
        """n quasi-random points on the surface at time t (testing aid)."""
        raise UnsupportedSurface(f"no sampler for kind {self.kind!r}")

    def closest_point(self, t, x):
        """Project a single point and package the result with checks.

        Raises PointOutsideTube where the projection is not certified unique.
        """
        x = np.asarray(x, dtype=float)
        self._check_in_tube(t, x)
        q = self.project(t, x)
        nu = self.normal(t, q)
        diff = x - q
        dist = float(np.linalg.norm(diff))
        sign = 1.0 if float(np.dot(diff, nu)) >= 0.0 else -1.0
        return ClosestPointResult(point=q, signed_distance=sign * dist, normal=nu)

    def _check_in_tube(self, t, x):
        pass


def _radial_project(x, radius):
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return radius * x / r


def _radial_jacobian(x, radius):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    unit = x / r[..., None]
    d = x.shape[-1]
    eye = np.eye(d)
    outer = unit[..., :, None] * unit[..., None, :]
    return (radius / r)[..., None, None] * (eye - outer)


class _RadialSurface(Surface):
    """Shared machinery for circles/spheres, possibly with radius varying in t."""

    def radius(self, t):
        raise NotImplementedError

    def implicit(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) - self.radius(t)

    def project(self, t, x):
        return _radial_project(np.asarray(x, dtype=float), self.radius(t))

    def normal(self, t, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def projection_jacobian(self, t, x):
        return _radial_jacobian(x, self.radius(t))

    def tube_radius(self, t=0.0):
        return 0.5 * self.radius(t)

    def measure(self, t=0.0):
        r = self.radius(t)
        if self.dimension == 1:
            return TWO_PI * r
        return 4.0 * math.pi * r * r

    def geodesic_distance(self, t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = self.radius(t)
        xn = x / np.linalg.norm(x, axis=-1, keepdims=True)
        yn = y / np.linalg.norm(y, axis=-1, keepdims=True)
        c = np.clip(np.sum(xn * yn, axis=-1), -1.0, 1.0)
        return r * np.arccos(c)

    def parametric_quadrature(self, t, order):
        r = self.radius(t)
        if self.dimension == 1:
            n = max(order, 8)
            theta = TWO_PI * np.arange(n) / n
            pts = r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            w = np.full(n, TWO_PI * r / n)
            return pts, w
        # tensor Gauss-Legendre in (colatitude, longitude)
        n = max(order, 8)
        gx, gw = np.polynomial.legendre.leggauss(n)
        phi = 0.5 * math.pi * (gx + 1.0)  # colatitude in (0, pi)
        wphi = 0.5 * math.pi * gw
        ntheta = 2 * n
        theta = TWO_PI * np.arange(ntheta) / ntheta
        wtheta = TWO_PI / ntheta
        P, T = np.meshgrid(phi, theta, indexing="ij")
        pts = r * np.stack(
            [np.sin(P) * np.cos(T), np.sin(P) * np.sin(T), np.cos(P)], axis=-1
        ).reshape(-1, 3)
        w = (r * r * np.sin(P) * wphi[:, None] * wtheta).reshape(-1)
        return pts, w

    def sample_points(self, t, n, rng):
        if self.dimension == 1:
            theta = rng.uniform(0.0, TWO_PI, size=n)
            pts = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        else:
            v = rng.normal(size=(n, 3))
            pts = v / np.linalg.norm(v, axis=-1, keepdims=True)
        return self.radius(t) * pts

    def _check_in_tube(self, t, x):
        # The radial projection is well defined everywhere except near the
        # center, where it becomes ill-conditioned.
        if np.linalg.norm(x) < 0.25 * self.radius(t):
            raise PointOutsideTube("point too close to the center for projection")


class Circle(_RadialSurface):
    kind = "circle"

    def __init__(self, radius=1.0, horizon=1.0):
        super().__init__(dimension=1, horizon=horizon)
        self._radius = float(radius)

    def radius(self, t):
        return self._radius


class Sphere(_RadialSurface):
    kind = "sphere"

    def __init__(self, radius=1.0, horizon=1.0):
        super().__init__(dimension=2, horizon=horizon)
        self._radius = float(radius)

    def radius(self, t):
        return self._radius


class ScaledSphereFlow(_RadialSurface):
    """Circle/sphere uniformly scaled in time: r(t) = 1 + amplitude*sin(2*pi*t).

    The flow map is X(t, y) = r(t)*y, so the velocity is (r'(t)/r(t))*x exactly.
    """

    kind = "scaled_sphere_flow"
    is_stationary = False

    def __init__(self, dimension=2, amplitude=0.25, horizon=1.0):
        super().__init__(dimension=dimension, horizon=horizon)
        if not 0.0 <= amplitude < 1.0:
            raise ValueError("amplitude must lie in [0, 1)")
        self.amplitude = float(amplitude)

    def radius(self, t):
        return 1.0 + self.amplitude * math.sin(TWO_PI * t)

    def radius_rate(self, t):
        return self.amplitude * TWO_PI * math.cos(TWO_PI * t)

    def position(self, t, y):
        return self.radius(t) * np.asarray(y, dtype=float)

    def inverse_position(self, t, x):
        return np.asarray(x, dtype=float) / self.radius(t)

    def velocity(self, t, x):
        return (self.radius_rate(t) / self.radius(t)) * np.asarray(x, dtype=float)


class Torus(Surface):
    """Torus of revolution around the z-axis: major radius R, minor radius r."""

    kind = "torus"

    def __init__(self, major=2.0, minor=0.7, horizon=1.0):
        super().__init__(dimension=2, horizon=horizon)
        if minor >= major:
            raise ValueError("minor radius must be smaller than major radius")
        self.major = float(major)
        self.minor = float(minor)

    def implicit(self, t, x):
        x = np.asarray(x, dtype=float)
        s = np.hypot(x[..., 0], x[..., 1])
        return np.hypot(s - self.major, x[..., 2]) - self.minor

    def _tube_center(self, x):
        s = np.hypot(x[..., 0], x[..., 1])
        e = np.zeros_like(x)
        e[..., 0] = x[..., 0] / s
        e[..., 1] = x[..., 1] / s
        return self.major * e, e, s

    def project(self, t, x):
        x = np.asarray(x, dtype=float)
        c, _, _ = self._tube_center(x)
        w = x - c
        return c + self.minor * w / np.linalg.norm(w, axis=-1, keepdims=True)

    def normal(self, t, x):
        x = np.asarray(x, dtype=float)
        c, _, _ = self._tube_center(x)
        w = x - c
        return w / np.linalg.norm(w, axis=-1, keepdims=True)

    def projection_jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        c, e, s = self._tube_center(x)
        d = x.shape[-1]
        eye = np.eye(d)
        planar = np.diag([1.0, 1.0, 0.0])
        ee = e[..., :, None] * e[..., None, :]
        dc = (self.major / s)[..., None, None] * (planar - ee)
        w = x - c
        wn = np.linalg.norm(w, axis=-1)
        u = w / wn[..., None]
        uu = u[..., :, None] * u[..., None, :]
        du = np.einsum("...ij,...jk->...ik", eye - uu, eye - dc) / wn[..., None, None]
        return dc + self.minor * du

    def tube_radius(self, t=0.0):
        return 0.5 * self.minor

    def measure(self, t=0.0):
        return 4.0 * math.pi * math.pi * self.major * self.minor

    def geodesic_distance(self, t, x, y):
        # chart-based approximation: flat metric in the (tube angle, axis angle)
        # chart; adequate for dyadic-set bookkeeping, not an exact geodesic
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)

        def angles(p):
            s = np.hypot(p[..., 0], p[..., 1])
            phi = np.arctan2(p[..., 1], p[..., 0])
            theta = np.arctan2(p[..., 2], s - self.major)
            return theta, phi

        tx, px = angles(x)
        ty, py = angles(y)
        dtheta = np.abs(np.mod(tx - ty + math.pi, TWO_PI) - math.pi)
        dphi = np.abs(np.mod(px - py + math.pi, TWO_PI) - math.pi)
        return np.hypot(self.minor * dtheta, self.major * dphi)

    def sample_points(self, t, n, rng):
        theta = rng.uniform(0.0, TWO_PI, size=n)
        phi = rng.uniform(0.0, TWO_PI, size=n)
        s = self.major + self.minor * np.cos(theta)
        return np.stack(
            [s * np.cos(phi), s * np.sin(phi), self.minor * np.sin(theta)], axis=-1
        )

    def _check_in_tube(self, t, x):
        if abs(float(self.implicit(t, np.asarray(x, dtype=float)))) > self.tube_radius(t):
            raise PointOutsideTube("point outside the torus projection tube")


class EllipsoidFlow(Surface):
    """Ellipsoid with axes oscillating in time via a diagonal scaling.

    Axis i has length a_i(t) = 1 + amplitudes[i]*sin(2*pi*t), so the initial
    surface is the unit sphere and the velocity is v_i = (a_i'/a_i) x_i.
    """

    kind = "ellipsoid_flow"
    is_stationary = False

    def __init__(self, dimension=2, amplitudes=None, horizon=1.0):
        super().__init__(dimension=dimension, horizon=horizon)
        if amplitudes is None:
            amplitudes = (0.2, -0.12, 0.08)[: self.ambient_dim]
        amplitudes = tuple(float(a) for a in amplitudes)
        if len(amplitudes) != self.ambient_dim:
            raise ValueError("need one amplitude per ambient coordinate")
        if max(abs(a) for a in amplitudes) >= 1.0:
            raise ValueError("amplitudes must have modulus < 1")
        self.amplitudes = amplitudes

    def axes(self, t):
        return np.array(
            [1.0 + a * math.sin(TWO_PI * t) for a in self.amplitudes]
        )

    def axes_rate(self, t):
        return np.array(
            [a * TWO_PI * math.cos(TWO_PI * t) for a in self.amplitudes]
        )

    def implicit(self, t, x):
        x = np.asarray(x, dtype=float)
        a = self.axes(t)
        return np.sum((x / a) ** 2, axis=-1) - 1.0

    def position(self, t, y):
        return self.axes(t) * np.asarray(y, dtype=float)

    def inverse_position(self, t, x):
        return np.asarray(x, dtype=float) / self.axes(t)

    def velocity(self, t, x):
        return (self.axes_rate(t) / self.axes(t)) * np.asarray(x, dtype=float)

    def normal(self, t, x):
        x = np.asarray(x, dtype=float)
        a = self.axes(t)
        g = 2.0 * x / (a * a)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _solve_multiplier(self, t, x, tol=1e-14, maxiter=50):
        """Lagrange multiplier of the nearest-point condition, vectorized.

        q_i = a_i^2 x_i / (a_i^2 + lam) with g(lam) = sum (a_i x_i/(a_i^2+lam))^2 - 1
        monotone decreasing on (-min a_i^2, inf); damped Newton with a bisection
        safeguard.
        """
        x = np.asarray(x, dtype=float)
        a2 = self.axes(t) ** 2
        ax2 = a2 * x * x  # (a_i x_i)^2
        lam_min = -np.min(a2)
        lo = np.full(x.shape[:-1], lam_min + 1e-12 * np.min(a2))
        hi = np.full(x.shape[:-1], np.max(a2) + np.sum(np.abs(x), axis=-1) ** 2)
        lam = np.zeros(x.shape[:-1])
        lam = np.clip(lam, lo, hi)
        converged = np.zeros(x.shape[:-1], dtype=bool)
        for _ in range(maxiter):
            denom = a2 + lam[..., None]
            g = np.sum(ax2 / denom**2, axis=-1) - 1.0
            converged = np.abs(g) <= tol * np.maximum(
                1.0, np.sum(ax2 / a2**2, axis=-1)
            )
            if np.all(converged):
                break
            dg = -2.0 * np.sum(ax2 / denom**3, axis=-1)
            lo = np.where(g > 0, lam, lo)
            hi = np.where(g < 0, lam, hi)
            step = np.where(np.abs(dg) > 0, -g / np.where(dg == 0, 1.0, dg), 0.0)
            lam_new = lam + step
            bad = (lam_new <= lo) | (lam_new >= hi) | ~np.isfinite(lam_new)
            lam = np.where(bad & ~converged, 0.5 * (lo + hi), np.where(converged, lam, lam_new))
        if not np.all(converged):
            raise NonConvergence("ellipsoid projection Newton did not converge")
        return lam

    def project(self, t, x):
        x = np.asarray(x, dtype=float)
        a2 = self.axes(t) ** 2
        lam = self._solve_multiplier(t, x)
        return a2 * x / (a2 + lam[..., None])

    def projection_jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        a2 = self.axes(t) ** 2
        lam = self._solve_multiplier(t, x)
        denom = a2 + lam[..., None]
        q = a2 * x / denom
        # implicit differentiation of the multiplier equation
        dldx = (a2 * x / denom**2) / np.sum(
            a2 * x * x / denom**3, axis=-1, keepdims=True
        )
        diag = a2 / denom
        d = x.shape[-1]
        jac = np.zeros(x.shape[:-1] + (d, d))
        idx = np.arange(d)
        jac[..., idx, idx] = diag
        jac -= (a2 * x / denom**2)[..., :, None] * dldx[..., None, :]
        return jac

    def tube_radius(self, t=0.0):
        return 0.4 * float(np.min(self.axes(t)))

    def sample_points(self, t, n, rng):
        v = rng.normal(size=(n, self.ambient_dim))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return self.axes(t) * v

    def _check_in_tube(self, t, x):
        q = self.project(t, np.asarray(x, dtype=float))
        if np.linalg.norm(np.asarray(x, dtype=float) - q) > self.tube_radius(t):
            raise PointOutsideTube("point outside the ellipsoid projection tube")


def make_surface(kind, dimension=None, params=(), horizon=1.0):
    """Build a surface from a config-style description.

    kind in {circle, sphere, torus, scaled_sphere_flow, ellipsoid_flow};
    params carries radii/axis data where applicable.
    """
    params = tuple(float(p) for p in params)
    if kind == "circle":
        return Circle(radius=params[0] if params else 1.0, horizon=horizon)
    if kind == "sphere":
        return Sphere(radius=params[0] if params else 1.0, horizon=horizon)
    if kind == "torus":
        major = params[0] if params else 2.0
        minor = params[1] if len(params) > 1 else 0.7
        return Torus(major=major, minor=minor, horizon=horizon)
    if kind == "scaled_sphere_flow":
        dim = 2 if dimension is None else int(dimension)
        amp = params[0] if params else 0.25
        return ScaledSphereFlow(dimension=dim, amplitude=amp, horizon=horizon)
    if kind == "ellipsoid_flow":
        dim = 2 if dimension is None else int(dimension)
        amps = params if params else None
        return EllipsoidFlow(dimension=dim, amplitudes=amps, horizon=horizon)
    raise UnsupportedSurface(f"unknown surface kind {kind!r}")


# ---------------------------------------------------------------------------
# exact solutions of the surface heat equation on stationary circle/sphere
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatSolution:
    """Separable decaying solution u(t,x) = exp(-rate*t) * profile(x), f = 0."""

    decay_rate: float
    value: object
    forcing: object
    initial: object


def exact_heat_solution(surface, mode):
    """Eigenfunction-decay solutions used as convergence oracles.

    Circle of radius r: u = exp(-(n/r)^2 t) sin(n*theta).
    Sphere of radius r: u = exp(-l(l+1)/r^2 t) P_l(x3/r) (zonal harmonic).
    """
    mode = int(mode)
    if mode < 1:
        raise ValueError("mode must be >= 1")
    if isinstance(surface, Circle):
        r = surface.radius(0.0)
        rate = (mode / r) ** 2

        def profile(x):
            x = np.asarray(x, dtype=float)
            theta = np.arctan2(x[..., 1], x[..., 0])
            return np.sin(mode * theta)

    elif isinstance(surface, Sphere):
        r = surface.radius(0.0)
        rate = mode * (mode + 1) / r**2
        leg = np.polynomial.legendre.Legendre.basis(mode)

        def profile(x):
            x = np.asarray(x, dtype=float)
            return leg(np.clip(x[..., -1] / r, -1.0, 1.0))

    else:
        raise UnsupportedSurface(
            "exact heat solutions exist only on the stationary circle and sphere"
        )

    def value(t, x):
        return math.exp(-rate * t) * profile(x)

    def forcing(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    return HeatSolution(
        decay_rate=rate, value=value, forcing=forcing, initial=profile
    )


# ---------------------------------------------------------------------------
# forcing catalog for the refinement studies
# ---------------------------------------------------------------------------

_BUMP_WIDTH = 0.6
_BUMP_PERIOD = 2.0


def _bump_center(surface, t):
    phi = TWO_PI * t / _BUMP_PERIOD
    if isinstance(surface, Torus):
        theta = 2.0 * TWO_PI * t
        s = surface.major + surface.minor * math.cos(theta)
        return np.array([s * math.cos(phi), s * math.sin(phi), surface.minor * math.sin(theta)])
    if isinstance(surface, EllipsoidFlow):
        a = surface.axes(t)
        if surface.ambient_dim == 2:
            return a * np.array([math.cos(phi), math.sin(phi)])
        alpha = 1.0
        return a * np.array(
            [math.sin(alpha) * math.cos(phi), math.sin(alpha) * math.sin(phi), math.cos(alpha)]
        )
    # radial kinds
    rho = surface.radius(t)
    if surface.dimension == 1:
        return rho * np.array([math.cos(phi), math.sin(phi)])
    alpha = 1.0
    return rho * np.array(
        [math.sin(alpha) * math.cos(phi), math.sin(alpha) * math.sin(phi), math.cos(alpha)]
    )


def _monomials(x):
    """Low-order ambient monomials 1, x_i, x_i*x_j (i<=j), stacked on the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = [np.ones(x.shape[:-1])]
    cols.extend(x[..., i] for i in range(d))
    for i in range(d):
        for j in range(i, d):
            cols.append(x[..., i] * x[..., j])
    return np.stack(cols, axis=-1)


def forcing_profile(profile_id, surface):
    """Return a deterministic forcing f(t, x) from the documented catalog.

    Catalog: "zero"; "bump" (traveling smooth bump with peak value 1);
    "sqwave" (smoothed square wave in time times a smooth spatial factor);
    "osc-seed<k>" (low-frequency random-coefficient sum, fixed seed k).
    """
    if profile_id == "zero":
        def zero(t, x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1])
        return zero

    if profile_id == "bump":
        def bump(t, x):
            x = np.asarray(x, dtype=float)
            c = _bump_center(surface, t)
            d2 = np.sum((x - c) ** 2, axis=-1)
            return np.exp(-d2 / (2.0 * _BUMP_WIDTH**2))
        return bump

    if profile_id == "sqwave":
        def sqwave(t, x):
            x = np.asarray(x, dtype=float)
            return math.tanh(6.0 * math.sin(TWO_PI * t)) * (
                1.0 + 0.5 * np.sin(3.0 * x[..., 0])
            )
        return sqwave

    if profile_id.startswith("osc-seed"):
        try:
            seed = int(profile_id[len("osc-seed"):])
        except ValueError:
            raise UnknownProfile(f"malformed profile id {profile_id!r}") from None
        d = surface.ambient_dim
        nmono = 1 + d + d * (d + 1) // 2
        ntime = 5
        rng = np.random.default_rng(seed)
        coeff = rng.uniform(-1.0, 1.0, size=(nmono, ntime)) / math.sqrt(nmono * ntime)

        def oscillator(t, x):
            tau = np.array(
                [
                    1.0,
                    math.cos(TWO_PI * t),
                    math.sin(TWO_PI * t),
                    math.cos(2.0 * TWO_PI * t),
                    math.sin(2.0 * TWO_PI * t),
                ]
            )
            return _monomials(x) @ (coeff @ tau)

        return oscillator

    raise UnknownProfile(f"unknown forcing profile {profile_id!r}")
