"""Discrete heat-kernel diagnostics: source evolution, decay fits, kernel
consistency between the discrete and exact surfaces, and the dyadic
space-time decomposition report."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetExceeded,
    HTooLarge,
    InsufficientSamples,
    MeshMismatch,
)
from .fem import (
    DISCRETE,
    LIFTED,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    delta_load,
    discrete_delta,
    element_point,
    element_values,
    locate_point,
    norm_lq,
    radial_inverse_lift,
)
from .sparse import cg_solve
from .timestepping import TimeGrid, solve_stationary
from .surfaces import forcing_profile


def smallest_nonzero_eigenvalue(mass, stiffness, tol=1e-10, maxiter=400, seed=0):
    """Smallest nonzero generalized eigenvalue of (A, M) by inverse iteration
    on the shifted pencil (A + M, M) with the constant mode deflated."""
    n = mass.n
    rng = np.random.default_rng(seed)
    ones = np.ones(n)
    m_one = mass.matvec(ones)
    weight = float(ones @ m_one)
    shifted = stiffness.scaled_add(1.0, mass)

    y = rng.standard_normal(n)
    y -= ones * float(m_one @ y) / weight
    y /= math.sqrt(float(y @ mass.matvec(y)))
    lam = math.inf
    x = y
    for _ in range(maxiter):
        x, _ = cg_solve(shifted, mass.matvec(y), tol=1e-13, x0=y)
        x -= ones * float(m_one @ x) / weight
        mx = mass.matvec(x)
        lam_new = float(x @ stiffness.matvec(x)) / float(x @ mx)
        x /= math.sqrt(float(x @ mx))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
        y = x
    return lam


def default_source_points(mesh, count=8):
    """Sources spread over the mesh: vertices, element interiors, midpoints."""
    if mesh.dimension == 1:
        refs = [np.array([0.0]), np.array([0.5]), np.array([0.37]), np.array([0.81])]
    else:
        refs = [
            np.array([0.0, 0.0]),
            np.array([1.0 / 3.0, 1.0 / 3.0]),
            np.array([0.5, 0.0]),
            np.array([0.21, 0.34]),
        ]
    points = []
    for i in range(count):
        element = int(round(i * mesh.num_elements / count)) % mesh.num_elements
        points.append(element_point(mesh, element, refs[i % len(refs)]))
    return points


def discrete_green(mesh, x0, grid, cg_tol=1e-12, store_coefficients=True,
                   store_fields=("u", "udot")):
    """Homogeneous evolution of the discrete point source at x0 on the frozen
    snapshot; the total discrete mass (kernel, 1) stays at 1 exactly."""
    space = FeSpace(mesh, DISCRETE)
    delta = discrete_delta(space, x0, tol=cg_tol)
    zero = forcing_profile("zero", mesh.surface)
    traj = solve_stationary(
        mesh, zero, grid,
        u0=delta.coeffs, qnorms=(1.0, 2.0), cg_tol=cg_tol,
        store_coefficients=store_coefficients, store_fields=store_fields,
    )
    traj.x0 = np.asarray(x0, dtype=float)
    return traj


@dataclass
class DecayFit:
    amplitude: float
    rate: float
    r_squared: float
    times: np.ndarray
    values: np.ndarray


def _log_linear_fit(times, values):
    logs = np.log(values)
    slope, intercept = np.polyfit(times, logs, 1)
    fitted = slope * times + intercept
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def green_decay_study(mesh, grid=None, sources=None, window=(1.0, None),
                      cg_tol=1e-12):
    """Fit the long-time exponential decay of the kernel's time derivative.

    Tracks max over sources of the L^1 norm of d/dt kernel per time node,
    restricted to the fit window (default t >= 1), and returns the log-linear
    fit (rate > 0 means decay exp(-rate*t)).
    """
    if grid is None:
        grid = TimeGrid.from_mesh(mesh, t_end=3.0)
    sources = default_source_points(mesh) if sources is None else sources
    times = grid.times()
    envelope = np.zeros(len(times))
    for x0 in sources:
        traj = discrete_green(mesh, x0, grid, cg_tol=cg_tol,
                              store_coefficients=False)
        envelope = np.maximum(envelope, traj.norms("udot", 1.0))
    t_lo, t_hi = window
    t_hi = times[-1] if t_hi is None else t_hi
    sel = (times >= t_lo) & (times <= t_hi) & (envelope > 0)
    if sel.sum() < 5:
        raise InsufficientSamples("need at least 5 samples in the fit window")
    slope, intercept, r2 = _log_linear_fit(times[sel], envelope[sel])
    return DecayFit(
        amplitude=math.exp(intercept),
        rate=-slope,
        r_squared=r2,
        times=times[sel],
        values=envelope[sel],
    )


def delta_decay_fit(space, x0, mass=None, exclusion=3.0, floor=1e-13):
    """Regression of log|delta coefficients| against distance/h outside an
    exclusion ball of ``exclusion``*h; returns (slope, r2, decay_length).

    decay_length is the fitted K in |delta| ~ h^-m exp(-dist/(K h)).
    """
    mesh = space.mesh
    delta = discrete_delta(space, x0, mass=mass)
    pts = space.dof_points()
    dist = mesh.surface.geodesic_distance(mesh.time, pts, np.asarray(x0, float))
    h = mesh.h
    vals = np.abs(delta.coeffs)
    peak = vals.max()
    sel = (dist > exclusion * h) & (vals > floor * peak)
    if sel.sum() < 5:
        raise InsufficientSamples("not enough dofs outside the exclusion ball")
    slope, _, r2 = _log_linear_fit(dist[sel] / h, np.maximum(vals[sel], 1e-300))
    decay_length = -1.0 / slope if slope < 0 else math.inf
    return {
        "slope": float(slope),
        "r_squared": float(r2),
        "decay_length": float(decay_length),
        "peak": float(peak),
        "n_samples": int(sel.sum()),
    }


def delta_consistency(discrete_space, lifted_space, x0, p):
    """Distance between the lifted discrete point source and the point source
    of the lifted space, relative to the latter's norm.

    Both spaces must live on the same mesh snapshot; the source of the lifted
    space sits at the projection of x0.
    """
    if discrete_space.mesh is not lifted_space.mesh:
        raise MeshMismatch("spaces must share one mesh snapshot")
    if discrete_space.tag != DISCRETE or lifted_space.tag != LIFTED:
        raise MeshMismatch("expected (discrete, lifted) spaces")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    e = delta_load(discrete_space, x0)
    mass_h = assemble_mass(discrete_space)
    mass_g = assemble_mass(lifted_space)
    bar_coeffs, _ = cg_solve(mass_h, e, tol=1e-13)
    tilde_coeffs, _ = cg_solve(mass_g, e, tol=1e-13)
    diff = lifted_space.function(bar_coeffs - tilde_coeffs)
    tilde = lifted_space.function(tilde_coeffs)
    dnorm = norm_lq(diff, p)
    tnorm = norm_lq(tilde, p)
    return {"difference_norm": dnorm, "reference_norm": tnorm,
            "ratio": dnorm / tnorm}


def kernel_difference_l1(coarse_mesh, fine_mesh, x0, grid, cg_tol=1e-11,
                         max_fine_dofs=100_000, quad_order=None):
    """Truncated L^1 space-time norm of the difference of kernel time
    derivatives, with the fine mesh standing in for the exact kernel.

    Both kernels are lifted onto the exact surface and compared there; the
    value is recomputed with a halved time step to attach a Richardson error
    estimate.  x0 must lie on the exact surface (it is projected to each mesh
    through the inverse lift).
    """
    if coarse_mesh.surface is not fine_mesh.surface:
        raise MeshMismatch("meshes must discretize one surface")
    if coarse_mesh is not fine_mesh and coarse_mesh.h <= 3.5 * fine_mesh.h:
        raise MeshMismatch("reference mesh must be at least ~4x finer")
    if fine_mesh.num_nodes > max_fine_dofs:
        raise BudgetExceeded(
            f"fine mesh has {fine_mesh.num_nodes} dofs > cap {max_fine_dofs}"
        )
    surface = coarse_mesh.surface
    x0 = surface.project(coarse_mesh.time, np.asarray(x0, dtype=float))

    lifted_fine = FeSpace(fine_mesh, LIFTED, quad_order=quad_order)
    geom = lifted_fine.geometry()
    flat_pts = geom.points.reshape(-1, geom.points.shape[-1])
    c_elems, c_refs = radial_inverse_lift(coarse_mesh, flat_pts)
    sv_coarse = coarse_mesh.reference.shape_values(c_refs)
    gather = coarse_mesh.elements[c_elems]
    weights = geom.weights.reshape(-1)

    def source_on(mesh):
        elems, refs = radial_inverse_lift(mesh, x0[None, :])
        return element_point(mesh, int(elems[0]), refs[0])

    def run(time_grid):
        coarse = discrete_green(coarse_mesh, source_on(coarse_mesh), time_grid,
                                cg_tol=cg_tol, store_fields=("udot",))
        fine = discrete_green(fine_mesh, source_on(fine_mesh), time_grid,
                              cg_tol=cg_tol, store_fields=("udot",))
        times = time_grid.times()
        series = np.empty(len(times))
        for i in range(len(times)):
            fine_vals = element_values(
                fine.fields["udot"][i], fine_mesh.elements, geom
            ).reshape(-1)
            coarse_vals = np.sum(
                sv_coarse * coarse.fields["udot"][i][gather], axis=1
            )
            series[i] = float(weights @ np.abs(fine_vals - coarse_vals))
        total = float(np.trapezoid(series, times))
        tail_sel = times >= 0.5 * times[-1]
        tail = float(np.trapezoid(series[tail_sel], times[tail_sel]))
        return total, tail

    value_coarse_dt, _ = run(grid)
    value, tail = run(grid.halved())
    return {
        "l1_difference": value,
        "richardson_error": abs(value - value_coarse_dt),
        "tail_fraction": tail / value if value > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# dyadic decomposition of (0, 1) x Gamma around a source point
# ---------------------------------------------------------------------------


@dataclass
class DyadicDecomposition:
    center: np.ndarray
    c_star: float
    j_star: int
    radii: np.ndarray  # d_j = 2^-j for j = 0..j_star


def build_dyadic(mesh, x0, c_star=16.0):
    h = mesh.h
    if h >= 1.0 / (4.0 * c_star):
        raise HTooLarge(f"need h < 1/(4*C) = {1.0 / (4.0 * c_star):.4g}, got {h:.4g}")
    j_star = int(round(math.log2(1.0 / (c_star * h))))
    j_star = max(j_star, 2)
    return DyadicDecomposition(
        center=np.asarray(x0, dtype=float),
        c_star=float(c_star),
        j_star=j_star,
        radii=2.0 ** (-np.arange(j_star + 1)),
    )


def dyadic_report(traj, x0, c_star=16.0):
    """Per-annulus L^2 norms of the trajectory's field and its time
    derivative over the parabolic dyadic decomposition of (0,1) x Gamma.

    Classification uses rho = max(geodesic distance to x0, sqrt(t)); each
    space-time quadrature sample lands in exactly one set, so the reported
    measures add up to |(0,1) x Gamma_h| by construction.
    """
    mesh = traj.mesh0
    decomp = build_dyadic(mesh, x0, c_star)
    space = FeSpace(mesh, DISCRETE)
    geom = space.geometry()
    pts = geom.points.reshape(-1, geom.points.shape[-1])
    dist = mesh.surface.geodesic_distance(mesh.time, pts, decomp.center)
    w_space = geom.weights.reshape(-1)

    times = traj.times
    sel_time = times <= 1.0 + 1e-12
    times = times[sel_time]
    # composite trapezoid weights in time
    wt = np.zeros(len(times))
    wt[1:] += 0.5 * np.diff(times)
    wt[:-1] += 0.5 * np.diff(times)

    d_star = decomp.radii[-1]
    n_bins = decomp.j_star + 2  # Q_0 .. Q_{j_star}, innermost at index j_star+1
    meas = np.zeros(n_bins)
    u_sq = np.zeros(n_bins)
    du_sq = np.zeros(n_bins)
    u_all = traj.fields["u"]
    du_all = traj.fields["udot"]
    for i, t in enumerate(times):
        rho = np.maximum(dist, math.sqrt(t))
        bins = np.where(
            rho <= d_star,
            decomp.j_star + 1,
            np.clip(np.ceil(-np.log2(np.maximum(rho, 1e-300))), 0, decomp.j_star).astype(int),
        ).astype(int)
        uv = element_values(u_all[i], mesh.elements, geom).reshape(-1)
        duv = element_values(du_all[i], mesh.elements, geom).reshape(-1)
        wtotal = wt[i] * w_space
        meas += np.bincount(bins, weights=wtotal, minlength=n_bins)
        u_sq += np.bincount(bins, weights=wtotal * uv * uv, minlength=n_bins)
        du_sq += np.bincount(bins, weights=wtotal * duv * duv, minlength=n_bins)

    rows = []
    for j in range(decomp.j_star + 1):
        rows.append({
            "set": f"Q{j}",
            "radius": float(decomp.radii[j]),
            "measure": float(meas[j]),
            "field_l2": float(math.sqrt(u_sq[j])),
            "dtfield_l2": float(math.sqrt(du_sq[j])),
        })
    rows.append({
        "set": "innermost",
        "radius": float(d_star),
        "measure": float(meas[-1]),
        "field_l2": float(math.sqrt(u_sq[-1])),
        "dtfield_l2": float(math.sqrt(du_sq[-1])),
    })
    return {
        "j_star": decomp.j_star,
        "c_star": decomp.c_star,
        "rows": rows,
        "total_measure": float(meas.sum()),
    }
