"""Method-of-lines integration of the surface heat equation on moving meshes.

Two spatial schemes are supported: the non-conservative form (test functions
see the material time derivative nodally) and the conservative form (the time
derivative sits on the mass-weighted coefficient vector).  Implicit Euler is
the reference integrator; BDF2 is available where higher time accuracy is
needed (convergence studies).  Nodal coefficient vectors are transported by
keeping them fixed while the mesh moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidExponent, StepTooLarge
from .fem import (
    DISCRETE,
    ElementGeometry,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    element_norms_lq,
    element_values,
    load_from_geometry,
    load_vector,
    values_norm_lq,
)
from .sparse import cg_solve
from .surfaces import ScaledSphereFlow

SCHEME_A = "A"
SCHEME_B = "B"
STATIONARY = "stationary"

FIELDS = ("u", "udot", "lap", "fh")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps."""

    t_end: float
    n_steps: int

    @property
    def dt(self):
        return self.t_end / self.n_steps

    def times(self):
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    @classmethod
    def from_mesh(cls, mesh, t_end=1.0, factor=0.5):
        """Parabolic scaling dt = factor*h^2 (rounded up to a whole division)."""
        n = max(1, math.ceil(t_end / (factor * mesh.h**2)))
        return cls(t_end, n)

    def halved(self):
        return TimeGrid(self.t_end, 2 * self.n_steps)


class Trajectory:
    """Per-time-node record of a semi-discrete solve.

    fields maps "u", "udot", "lap", "fh" to (n_steps+1, N) arrays when
    coefficient storage is on; norm_series maps (field, q) to per-node
    L^q space norms computed against the mesh snapshot at each node.
    """

    def __init__(self, mesh0, grid, scheme, integrator):
        self.mesh0 = mesh0
        self.grid = grid
        self.scheme = scheme
        self.integrator = integrator
        self.times = grid.times()
        self.fields = {}
        self.norm_series = {}

    def norms(self, fieldname, q):
        key = (fieldname, float(q))
        if key in self.norm_series:
            return self.norm_series[key]
        if fieldname not in self.fields:
            raise KeyError(
                f"norms for {fieldname!r} at q={q} were not recorded and the "
                "coefficients are unavailable"
            )
        moving = self.scheme != STATIONARY and not self.mesh0.surface.is_stationary
        series = np.empty(len(self.times))
        mesh = self.mesh0
        geom = None
        for i, t in enumerate(self.times):
            if moving or geom is None:
                mesh = self.mesh0.evolved(t) if moving else self.mesh0
                space = FeSpace(mesh, DISCRETE)
                geom = space.geometry()
            series[i] = element_norms_lq(
                self.fields[fieldname][i], mesh.elements, geom, q
            )
        self.norm_series[key] = series
        return series


def spacetime_norm(traj, fieldname, p, q):
    """Bochner norm: composite trapezoid in t of the space norms to the p."""
    for exponent in (p, q):
        if not (1.0 < exponent < math.inf):
            raise InvalidExponent("space-time norms need exponents in (1, inf)")
    series = traj.norms(fieldname, q)
    return float(np.trapezoid(series**p, traj.times) ** (1.0 / p))


def _check_policy(grid, mesh, max_dt_factor):
    if max_dt_factor is not None and grid.dt > max_dt_factor * mesh.h**2 * (1 + 1e-9):
        raise StepTooLarge(
            f"dt={grid.dt:.3e} exceeds {max_dt_factor}*h^2={max_dt_factor * mesh.h ** 2:.3e}"
        )


def solve_heat(
    mesh0,
    forcing,
    grid,
    scheme=SCHEME_A,
    integrator="be",
    u0=None,
    qnorms=(2.0,),
    cg_tol=1e-12,
    store_coefficients=True,
    store_fields=FIELDS,
    max_dt_factor=None,
):
    """Integrate one of the semi-discrete schemes over the given time grid.

    forcing is f(t, x) evaluated at ambient points of Gamma_h(t) (callers pass
    the inverse-lifted exact forcing; nodes lie on Gamma so no transport is
    needed for the analytic families used here).  u0 is a coefficient vector
    (defaults to zero).  Returns a Trajectory.

    Per accepted step the non-conservative scheme satisfies
    M(t) udot + A(t) u = b(t) exactly up to solver tolerance, with
    udot the backward difference quotient of the nodal vector.
    """
    if scheme not in (SCHEME_A, SCHEME_B, STATIONARY):
        raise ValueError(f"unknown scheme {scheme!r}")
    if integrator not in ("be", "bdf2"):
        raise ValueError(f"unknown integrator {integrator!r}")
    if integrator == "bdf2" and scheme == SCHEME_B:
        raise ValueError("bdf2 is only wired for the non-conservative forms")
    _check_policy(grid, mesh0, max_dt_factor)

    moving = scheme != STATIONARY and not mesh0.surface.is_stationary
    times = grid.times()
    dt = grid.dt
    n_dofs = mesh0.num_nodes

    traj = Trajectory(mesh0, grid, scheme, integrator)
    qnorms = tuple(float(q) for q in qnorms)
    series = {(name, q): np.empty(len(times)) for name in FIELDS for q in qnorms}
    buffers = {name: [] for name in FIELDS}

    mesh = mesh0
    space = FeSpace(mesh, DISCRETE)
    geom = space.geometry()
    mass = assemble_mass(space)
    stiff = assemble_stiffness(space)
    # uniform dilation moves every node radially, so mass and stiffness scale
    # exactly by r^m and r^(m-2); skip per-step reassembly in that case
    dilation = moving and isinstance(mesh0.surface, ScaledSphereFlow)
    if dilation:
        m_dim = mesh0.dimension
        base = (mesh0.evolved(0.0), mass, stiff, geom)

    def snapshot(t1):
        if dilation:
            r = mesh0.surface.radius(t1)
            mesh0_, mass0, stiff0, geom0 = base
            geom_t = ElementGeometry(
                rule=geom0.rule,
                shape_values=geom0.shape_values,
                points=r * geom0.points,
                weights=r**m_dim * geom0.weights,
                tangent_grads=geom0.tangent_grads / r,
                metric_factor=r**m_dim * geom0.metric_factor,
            )
            return mesh0_, None, geom_t, mass0.scaled(r**m_dim), stiff0.scaled(r ** (m_dim - 2))
        mesh_t = mesh0.evolved(t1)
        space_t = FeSpace(mesh_t, DISCRETE)
        geom_t = space_t.geometry()
        return mesh_t, space_t, geom_t, assemble_mass(space_t), assemble_stiffness(space_t)

    u = np.zeros(n_dofs) if u0 is None else np.asarray(u0, dtype=float).copy()
    b0 = load_vector(space, forcing, t=times[0])
    force_scale = float(np.linalg.norm(b0))
    fh, _ = cg_solve(mass, b0, tol=cg_tol)
    lap, _ = cg_solve(mass, -stiff.matvec(u), tol=cg_tol)
    udot = fh + lap

    def push(i, vals, mesh_i, geom_i):
        for name in FIELDS:
            coeffs = vals[name]
            if qnorms:
                at_quad = element_values(coeffs, mesh_i.elements, geom_i)
                for q in qnorms:
                    series[(name, q)][i] = values_norm_lq(at_quad, coeffs, geom_i, q)
            if store_coefficients and name in store_fields:
                buffers[name].append(coeffs)

    push(0, {"u": u, "udot": udot, "lap": lap, "fh": fh}, mesh, geom)

    mass_prev = mass
    u_prev = None  # for bdf2
    for i in range(1, len(times)):
        t1 = times[i]
        if moving:
            mesh, space, geom, mass, stiff = snapshot(t1)
        b = load_from_geometry(geom, mesh.elements, n_dofs, forcing, t=t1)
        force_scale = max(force_scale, float(np.linalg.norm(b)))
        # relative CG tolerances are meaningless where the forcing crosses
        # zero; anchor an absolute floor to the forcing scale seen so far
        force_atol = cg_tol * force_scale

        if integrator == "bdf2" and u_prev is not None:
            # (3 u1 - 4 u0 + um1) / (2 dt) against M(t1)
            system = mass.scaled_add(2.0 * dt / 3.0, stiff)
            rhs = mass.matvec((4.0 * u - u_prev) / 3.0) + (2.0 * dt / 3.0) * b
            u_new, _ = cg_solve(system, rhs, tol=cg_tol, x0=u)
            udot = (3.0 * u_new - 4.0 * u + u_prev) / (2.0 * dt)
        else:
            system = mass.scaled_add(dt, stiff)
            if scheme == SCHEME_B:
                rhs = mass_prev.matvec(u) + dt * b
            else:
                rhs = mass.matvec(u) + dt * b
            u_new, _ = cg_solve(system, rhs, tol=cg_tol, x0=u)
            udot = (u_new - u) / dt

        fh, _ = cg_solve(mass, b, tol=cg_tol, x0=fh, atol=force_atol)
        if scheme == SCHEME_B:
            lap, _ = cg_solve(mass, -stiff.matvec(u_new), tol=cg_tol, x0=lap)
        else:
            # scheme identity: M udot = b - A u_new, hence lap = udot - fh
            lap = udot - fh

        u_prev = u if integrator == "bdf2" else None
        u = u_new
        push(i, {"u": u, "udot": udot, "lap": lap, "fh": fh}, mesh, geom)
        mass_prev = mass

    traj.norm_series = series
    if store_coefficients:
        traj.fields = {
            name: np.array(buffers[name]) for name in FIELDS if name in store_fields
        }
    return traj


def solve_scheme_a(mesh0, forcing, grid, **kwargs):
    """Non-conservative evolving scheme (nodal material derivative)."""
    return solve_heat(mesh0, forcing, grid, scheme=SCHEME_A, **kwargs)


def solve_scheme_b(mesh0, forcing, grid, **kwargs):
    """Conservative evolving scheme; with f = 0 the weighted total mass
    1^T M(t) u is preserved exactly up to solver tolerance."""
    return solve_heat(mesh0, forcing, grid, scheme=SCHEME_B, **kwargs)


def solve_stationary(mesh, forcing, grid, **kwargs):
    """Heat flow on the frozen snapshot the mesh was built or evolved to."""
    return solve_heat(mesh, forcing, grid, scheme=STATIONARY, **kwargs)


def weighted_total_mass(mesh, coeffs):
    """1^T M(t) u, the discrete integral of the finite element function."""
    space = FeSpace(mesh, DISCRETE)
    mass = assemble_mass(space)
    return float(np.ones(mesh.num_nodes) @ mass.matvec(coeffs))
