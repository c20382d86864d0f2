"""Refinement-study harness: bounded-ratio tables for the regularity checks,
convergence studies against the exact decay solutions, and the fitted-constant
inequality suite.  All reports are deterministic for a fixed config and seed
and are emitted as CSV plus a plain-text summary."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, IOFailure, RichardsonFailure, UnsupportedSurface
from .fem import (
    DISCRETE,
    LIFTED,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    discrete_laplacian,
    element_values,
    interpolate,
    l2_project,
    norm_lq,
    norm_w1q,
    ritz_project,
)
from .meshing import build_circle_mesh, build_sphere_mesh
from .surfaces import exact_heat_solution, forcing_profile, make_surface
from .timestepping import (
    SCHEME_A,
    SCHEME_B,
    STATIONARY,
    TimeGrid,
    solve_heat,
    spacetime_norm,
)

CSV_COLUMNS = ("level", "h", "dt", "p", "q", "norm_dtu", "norm_lapu",
               "norm_f", "ratio", "richardson_ok")


@dataclass(frozen=True)
class StudyConfig:
    surface_kind: str = "circle"
    dimension: int = 1
    surface_params: tuple = ()
    horizon: float = 1.0
    scheme: str = STATIONARY
    degree: int = 1
    levels: tuple = (32, 64, 128, 256)
    pq_pairs: tuple = ((2.0, 2.0),)
    profile: str = "osc-seed42"
    mode: int = 1
    dt_factor: float = 0.5
    richardson_rtol: float = 0.01
    cg_tol: float = 1e-12
    seed: int = 42
    workers: int = 1

    def validate(self):
        if self.scheme not in (SCHEME_A, SCHEME_B, STATIONARY):
            raise ConfigError(f"scheme must be A, B or stationary, got {self.scheme!r}")
        if any(not (1.0 < p < math.inf and 1.0 < q < math.inf)
               for p, q in self.pq_pairs):
            raise ConfigError("all p, q must lie in (1, inf)")
        if list(self.levels) != sorted(set(self.levels)):
            raise ConfigError("levels must be strictly increasing")
        if self.dt_factor <= 0:
            raise ConfigError("dt_factor must be positive")
        return self

    def surface(self):
        return make_surface(self.surface_kind, self.dimension,
                            self.surface_params, self.horizon)


def config_hash(config):
    """Stable hash over the semantically relevant keys."""
    payload = json.dumps(asdict(config), sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_level_mesh(surface, level, degree):
    if surface.dimension == 1:
        return build_circle_mesh(surface, level, degree)
    if hasattr(surface, "radius") or surface.kind == "ellipsoid_flow":
        return build_sphere_mesh(surface, level, degree)
    raise UnsupportedSurface(f"no level builder for kind {surface.kind!r}")


@dataclass
class StudyRow:
    level: int
    h: float
    dt: float
    p: float
    q: float
    norm_dtu: float
    norm_lapu: float
    norm_f: float
    ratio: float  # nan encodes "NA" (zero forcing)
    richardson_ok: bool


@dataclass
class StudyReport:
    config: StudyConfig
    rows: list = field(default_factory=list)
    uniformity: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def rows_for(self, p, q):
        return [r for r in self.rows if r.p == p and r.q == q]


def _solve_level(config, surface, level):
    """One study cell: solve at dt and dt/2, return both trajectories."""
    mesh = build_level_mesh(surface, level, config.degree)
    grid = TimeGrid.from_mesh(mesh, t_end=1.0, factor=config.dt_factor)
    forcing = forcing_profile(config.profile, surface)
    qset = tuple(sorted({q for _, q in config.pq_pairs}))
    common = dict(
        scheme=config.scheme,
        u0=None,
        qnorms=qset,
        cg_tol=config.cg_tol,
        store_coefficients=False,
        max_dt_factor=4.0 * config.dt_factor,
    )
    coarse = solve_heat(mesh, forcing, grid, **common)
    fine = solve_heat(mesh, forcing, grid.halved(), **common)
    return mesh, grid, coarse, fine


def maxreg_study(config):
    """Ratio table R(h; p, q) = (|du/dt| + |discrete Laplacian u|) / |f_h| in
    the L^p(0,1; L^q) norms, with a dt-halving certificate per row.

    h-uniformity is declared per (p, q) when max/min of R over the levels is
    at most 1.25 and the last refinement step grows R by at most 10%.
    """
    config.validate()
    surface = config.surface()

    def cell(level):
        return _solve_level(config, surface, level)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            solved = list(pool.map(cell, config.levels))
    else:
        solved = [cell(level) for level in config.levels]

    report = StudyReport(config=config)
    for level, (mesh, grid, coarse, fine) in zip(config.levels, solved):
        for p, q in config.pq_pairs:
            norms_fine = {
                name: spacetime_norm(fine, name, p, q)
                for name in ("udot", "lap", "fh")
            }
            ok = True
            for name, value in norms_fine.items():
                ref = spacetime_norm(coarse, name, p, q)
                scale = max(abs(value), 1e-300)
                if abs(value - ref) / scale > config.richardson_rtol:
                    ok = False
            nf = norms_fine["fh"]
            ratio = (norms_fine["udot"] + norms_fine["lap"]) / nf if nf > 0 else math.nan
            report.rows.append(StudyRow(
                level=level, h=mesh.h, dt=grid.halved().dt, p=p, q=q,
                norm_dtu=norms_fine["udot"], norm_lapu=norms_fine["lap"],
                norm_f=nf, ratio=ratio, richardson_ok=ok,
            ))

    for p, q in config.pq_pairs:
        rows = report.rows_for(p, q)
        ratios = [r.ratio for r in rows if not math.isnan(r.ratio)]
        if not all(r.richardson_ok for r in rows):
            raise RichardsonFailure(
                f"dt-halving changed norms beyond {config.richardson_rtol:.0%} "
                f"at (p,q)=({p},{q})"
            )
        if ratios:
            spread = max(ratios) / min(ratios)
            last_growth = ratios[-1] / ratios[-2] - 1.0 if len(ratios) > 1 else 0.0
            report.uniformity[(p, q)] = {
                "spread": spread,
                "last_growth": last_growth,
                "uniform": spread <= 1.25 and last_growth <= 0.10,
            }
    return report


def convergence_study(config):
    """L^inf(0,T; L^2) errors against the exact eigenfunction-decay solution,
    integrated with BDF2 at dt = factor * h^((k+1)/2) so the time error stays
    below the spatial rate being measured."""
    config.validate()
    surface = config.surface()
    solution = exact_heat_solution(surface, config.mode)
    report = StudyReport(config=config)
    errors = []
    for level in config.levels:
        mesh = build_level_mesh(surface, level, config.degree)
        space = FeSpace(mesh, DISCRETE)
        n = max(2, math.ceil(1.0 / (config.dt_factor * mesh.h ** ((config.degree + 1) / 2.0 + 0.5))))
        grid = TimeGrid(1.0, n)
        u0 = interpolate(space, solution.initial)
        traj = solve_heat(
            mesh, solution.forcing, grid, scheme=STATIONARY, integrator="bdf2",
            u0=u0.coeffs, qnorms=(), cg_tol=config.cg_tol,
            store_coefficients=True, store_fields=("u",),
        )
        geom = space.geometry()
        exact_pts = surface.project(mesh.time, geom.points.reshape(-1, geom.points.shape[-1]))
        err = 0.0
        for i, t in enumerate(traj.times):
            uh = element_values(traj.fields["u"][i], mesh.elements, geom)
            ue = solution.value(t, exact_pts).reshape(uh.shape)
            err = max(err, math.sqrt(float(np.sum(geom.weights * (uh - ue) ** 2))))
        errors.append(err)
        report.rows.append(StudyRow(
            level=level, h=mesh.h, dt=grid.dt, p=math.inf, q=2.0,
            norm_dtu=math.nan, norm_lapu=math.nan, norm_f=math.nan,
            ratio=err, richardson_ok=True,
        ))
    hs = [r.h for r in report.rows]
    order = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    report.extras["errors"] = errors
    report.extras["observed_order"] = float(order)
    return report


# ---------------------------------------------------------------------------
# inequality suite (fitted-constant stability checks)
# ---------------------------------------------------------------------------


def _random_fe_functions(space, count, rng):
    return [space.function(rng.standard_normal(space.num_dofs))
            for _ in range(count)]


_PROJECTION_TEST_FUNCTIONS = (
    lambda x: np.abs(x[..., 0]),
    lambda x: np.tanh(8.0 * x[..., 0]),
    lambda x: np.sign(x[..., -1]) * np.minimum(1.0, 8.0 * np.abs(x[..., -1])),
    lambda x: np.exp(np.sin(5.0 * x[..., 0])),
    lambda x: x[..., 0] * x[..., -1],
)


def inequality_suite(config, count=20, eps_values=(0.1, 0.3, 1.0),
                     q_values=(2.0, 4.0)):
    """Per-level fitted constants for: lifted/discrete norm equivalence,
    L^p stability of the L^2 projection, the inverse inequality, the
    gradient-Laplacian interpolation inequality, and Ritz-projection
    W^{1,q} stability.  Stability means max/min <= 1.10 across levels."""
    config.validate()
    surface = config.surface()
    levels = config.levels
    out = {
        "levels": list(levels),
        "h": [],
        "norm_equivalence_c": [],
        "projection_stability": {p: [] for p in (1.0, 2.0, 4.0)},
        "inverse_constant": [],
        "interpolation_c": {q: [] for q in q_values},
        "ritz_stability": {q: [] for q in q_values},
    }
    for idx, level in enumerate(levels):
        rng = np.random.default_rng(config.seed + 1000 * idx)
        mesh = build_level_mesh(surface, level, config.degree)
        space = FeSpace(mesh, DISCRETE)
        lifted = FeSpace(mesh, LIFTED)
        mass = assemble_mass(space)
        stiff = assemble_stiffness(space)
        h = mesh.h
        out["h"].append(h)

        funcs = _random_fe_functions(space, count, rng)

        # norm equivalence between the discrete and lifted surfaces; the
        # lifted space reuses the discrete quadrature order so the two norms
        # sample identical points and differ only through the metric
        lifted_same_rule = FeSpace(mesh, LIFTED, quad_order=space.quad_order)
        c_equiv = 0.0
        for u in funcs:
            for p in (1.0, 2.0, 4.0, math.inf):
                r = norm_lq(lift_view(u, lifted_same_rule), p) / norm_lq(u, p)
                c_equiv = max(c_equiv, abs(r - 1.0) / h ** (config.degree + 1))
        out["norm_equivalence_c"].append(c_equiv)

        # L^p stability of the L2 projection on rough-ish functions
        for p in (1.0, 2.0, 4.0):
            worst = 0.0
            for fn in _PROJECTION_TEST_FUNCTIONS:
                proj = l2_project(space, fn, mass=mass, tol=config.cg_tol)
                worst = max(worst, norm_lq(proj, p) / norm_lq(fn, p, space=space))
            out["projection_stability"][p].append(worst)

        # inverse inequality |chi|_W12 <= K h^-1 |chi|_L2
        k_inv = max(norm_w1q(u, 2.0) * h / norm_lq(u, 2.0) for u in funcs)
        out["inverse_constant"].append(k_inv)

        # interpolation |grad u|_q <= C (eps^-1 |u|_q + eps |lap_h u|_q)
        for q in q_values:
            worst = 0.0
            for u in funcs:
                lap = discrete_laplacian(u, mass=mass, stiffness=stiff,
                                         tol=config.cg_tol)
                gn = _gradient_norm_lq(u, q)
                for eps in eps_values:
                    bound = norm_lq(u, q) / eps + eps * norm_lq(lap, q)
                    worst = max(worst, gn / bound)
            out["interpolation_c"][q].append(worst)

        # Ritz projection stability in W^{1,q} for w = sin(theta)-type data
        wfun, wgrad = _ritz_test_pair(surface)
        ritz = ritz_project(lifted, wfun, wgrad, tol=config.cg_tol)
        for q in q_values:
            num = norm_w1q(ritz, q)
            den = _callable_w1q_norm(lifted, wfun, wgrad, q)
            out["ritz_stability"][q].append(num / den)

    out["stable"] = {}
    # the equivalence constant is fitted once (coarsest level); finer levels
    # must stay inside the band with a factor-10 slack, since it is a maximum
    # over random draws rather than a deterministic constant
    c_fit = out["norm_equivalence_c"][0]
    out["stable"]["norm_equivalence_c"] = all(
        c <= 10.0 * c_fit for c in out["norm_equivalence_c"]
    )
    out["stable"]["inverse_constant"] = _growth_ok(out["inverse_constant"])
    for p, series in out["projection_stability"].items():
        out["stable"][f"projection_p{p:g}"] = _growth_ok(series)
    for q, series in out["interpolation_c"].items():
        out["stable"][f"interpolation_q{q:g}"] = _growth_ok(series)
    for q, series in out["ritz_stability"].items():
        out["stable"][f"ritz_q{q:g}"] = _growth_ok(series)
    out["all_stable"] = all(out["stable"].values())
    return out


def _growth_ok(series, budget=0.10):
    """Constants fitted at the coarsest level may not grow by more than the
    budget under refinement; shrinking is fine (the bound only gets easier)."""
    return max(series) <= (1.0 + budget) * series[0]


def lift_view(u, lifted_space):
    return lifted_space.function(u.coeffs)


def _gradient_norm_lq(u, q):
    grads, geom = u.gradients_at_quadrature()
    gmag = np.linalg.norm(grads, axis=-1)
    return float(np.sum(geom.weights * gmag**q) ** (1.0 / q))


def _callable_w1q_norm(space, fn, grad_fn, q):
    geom = space.geometry()
    pts = geom.points
    flat = pts.reshape(-1, pts.shape[-1])
    vals = np.asarray(fn(flat), dtype=float)
    grads = np.asarray(grad_fn(flat), dtype=float)
    nu = space.mesh.surface.normal(space.mesh.time, flat)
    tangential = grads - np.sum(grads * nu, axis=-1, keepdims=True) * nu
    gmag = np.linalg.norm(tangential, axis=-1)
    w = geom.weights.reshape(-1)
    return float(np.sum(w * (np.abs(vals) ** q + gmag**q)) ** (1.0 / q))


def _ritz_test_pair(surface):
    if surface.dimension == 1:
        def wfun(x):
            theta = np.arctan2(x[..., 1], x[..., 0])
            return np.sin(theta)

        def wgrad(x):
            r2 = np.sum(x * x, axis=-1, keepdims=True)
            g = np.zeros_like(x)
            # ambient extension of sin(theta) = y / r
            g[..., 0] = -x[..., 0] * x[..., 1] / r2[..., 0] ** 1.5
            g[..., 1] = (r2[..., 0] - x[..., 1] ** 2) / r2[..., 0] ** 1.5
            return g

        return wfun, wgrad

    def wfun(x):
        return x[..., 2]

    def wgrad(x):
        g = np.zeros_like(x)
        g[..., 2] = 1.0
        return g

    return wfun, wgrad


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "NA"
        return format(value, ".17g")
    return str(value)


def emit_reports(report, outdir, name="maxreg", summary_lines=None):
    """Write the CSV table, a pass/fail summary, and a manifest.

    Byte-identical outputs for identical config + seed; floats carry 17
    significant digits.
    """
    try:
        os.makedirs(outdir, exist_ok=True)
        csv_path = os.path.join(outdir, f"{name}.csv")
        with open(csv_path, "w", encoding="ascii") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in report.rows:
                fh.write(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS) + "\n")
        summary_path = os.path.join(outdir, f"{name}_summary.txt")
        with open(summary_path, "w", encoding="ascii") as fh:
            for (p, q), verdict in sorted(report.uniformity.items()):
                status = "PASS" if verdict["uniform"] else "FAIL"
                fh.write(
                    f"{status} h-uniform ratio p={p:g} q={q:g} "
                    f"spread={verdict['spread']:.6g} "
                    f"last_growth={verdict['last_growth']:.6g}\n"
                )
            for line in summary_lines or ():
                fh.write(line + "\n")
        manifest_path = os.path.join(outdir, f"{name}_manifest.json")
        manifest = {
            "artifact": "esfem",
            "version": __version__,
            "config_hash": config_hash(report.config),
            "config": asdict(report.config),
            "outputs": [os.path.basename(csv_path), os.path.basename(summary_path)],
        }
        with open(manifest_path, "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=list)
            fh.write("\n")
        return [csv_path, summary_path, manifest_path]
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
