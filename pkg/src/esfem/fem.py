"""Finite element spaces on a discrete surface and on its lifted image.

The "discrete" tag integrates with the metric of the piecewise-polynomial
surface itself; the "lifted" tag composes every element map with the exact
closest-point projection, so quadrature runs over the smooth surface with the
exact metric.  Both paths share one reference-element pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidExponent,
    PointNotOnMesh,
    SingularElement,
    UnsupportedSurface,
)
from .quadrature import reference_rule
from .sparse import CsrPattern, SparseMatrix, cg_solve

DISCRETE = "discrete"
LIFTED = "lifted"


class ElementGeometry:
    """Per-quadrature-point geometry shared by assembly and norms.

    points: (E, Q, d) mapped quadrature points (on Gamma_h or on Gamma);
    weights: (E, Q) quadrature weight times metric factor;
    tangent_grads: (E, Q, nloc, d) tangential basis gradients;
    base_points: for the lifted tag, the underlying Gamma_h points.
    """

    def __init__(self, rule, shape_values, points, weights, tangent_grads,
                 metric_factor, base_points=None):
        self.rule = rule
        self.shape_values = shape_values
        self.points = points
        self.weights = weights
        self.tangent_grads = tangent_grads
        self.metric_factor = metric_factor
        self.base_points = base_points


def _metric(jac, m):
    g = np.einsum("eqdi,eqdj->eqij", jac, jac)
    if m == 1:
        det = g[..., 0, 0]
        inv = (1.0 / det)[..., None, None]
    else:
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
        inv = np.empty_like(g)
        inv[..., 0, 0] = g[..., 1, 1]
        inv[..., 1, 1] = g[..., 0, 0]
        inv[..., 0, 1] = -g[..., 0, 1]
        inv[..., 1, 0] = -g[..., 1, 0]
        inv = inv / det[..., None, None]
    return det, inv


def element_geometry(mesh, tag=DISCRETE, order=None, ref_points=None):
    """Geometry tables at reference quadrature points (cached on the mesh)."""
    m = mesh.dimension
    if order is None:
        order = default_quad_order(mesh.degree, m, tag)
    cache = getattr(mesh, "_geom_cache", None)
    if cache is None:
        cache = {}
        mesh._geom_cache = cache
    key = (tag, order) if ref_points is None else None
    if key is not None and key in cache:
        return cache[key]

    rule = reference_rule(m, order)
    if ref_points is None:
        pts_ref = rule.points
        wts_ref = rule.weights
    else:
        pts_ref = np.asarray(ref_points, dtype=float).reshape(-1, m)
        wts_ref = np.zeros(len(pts_ref))
    ref = mesh.reference
    sv = ref.shape_values(pts_ref)
    sg = ref.shape_gradients(pts_ref)
    coords = mesh.element_coords()
    points = np.einsum("ql,eld->eqd", sv, coords)
    jac = np.einsum("qlm,eld->eqdm", sg, coords)
    base_points = None
    if tag == LIFTED:
        surface, t = mesh.surface, mesh.time
        base_points = points
        flat = points.reshape(-1, points.shape[-1])
        lifted = surface.project(t, flat).reshape(points.shape)
        dq = surface.projection_jacobian(t, flat).reshape(points.shape + (points.shape[-1],))
        jac = np.einsum("eqij,eqjm->eqim", dq, jac)
        points = lifted
    elif tag != DISCRETE:
        raise ValueError(f"unknown surface tag {tag!r}")
    det, inv = _metric(jac, m)
    if det.min() <= 0.0 or not np.all(np.isfinite(det)):
        raise SingularElement("degenerate element Jacobian")
    mu = np.sqrt(det)
    tgrad = np.einsum("eqdm,eqmn,qln->eqld", jac, inv, sg)
    geom = ElementGeometry(
        rule=rule,
        shape_values=sv,
        points=points,
        weights=wts_ref[None, :] * mu,
        tangent_grads=tgrad,
        metric_factor=mu,
        base_points=base_points,
    )
    if key is not None:
        cache[key] = geom
    return geom


def default_quad_order(degree, dim, tag):
    """2k+2 on the discrete surface; elevated for exact-metric integration."""
    base = 2 * degree + 2
    if tag == LIFTED:
        return max(base, 23 if dim == 1 else base + 4)
    return base


class FeSpace:
    """Isoparametric nodal space on a mesh snapshot, on Gamma_h or lifted."""

    def __init__(self, mesh, tag=DISCRETE, quad_order=None):
        if tag not in (DISCRETE, LIFTED):
            raise ValueError(f"unknown surface tag {tag!r}")
        self.mesh = mesh
        self.tag = tag
        self.degree = mesh.degree
        self.num_dofs = mesh.num_nodes
        self.quad_order = (
            default_quad_order(mesh.degree, mesh.dimension, tag)
            if quad_order is None
            else int(quad_order)
        )
        self._pattern = None

    def geometry(self, order=None):
        return element_geometry(self.mesh, self.tag, order or self.quad_order)

    def dof_points(self):
        """Coordinates attached to each dof (mesh nodes, which lie on Gamma)."""
        return self.mesh.nodes

    def pattern(self):
        cache = self.mesh.family_cache
        if "pattern" not in cache:
            el = self.mesh.elements
            rows = np.repeat(el, el.shape[1], axis=1)
            cols = np.tile(el, (1, el.shape[1]))
            cache["pattern"] = CsrPattern(self.num_dofs, rows, cols)
        return cache["pattern"]

    def function(self, coeffs):
        return FeFunction(self, np.asarray(coeffs, dtype=float))

    def zero_function(self):
        return FeFunction(self, np.zeros(self.num_dofs))


class FeFunction:
    """Coefficient vector bound to a space snapshot; nodal basis, immutable."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.num_dofs,):
            raise ValueError("coefficient length does not match the space")
        self.space = space
        self.coeffs = coeffs

    def values_at_quadrature(self, order=None):
        geom = self.space.geometry(order)
        return self.coeffs[self.space.mesh.elements] @ geom.shape_values.T, geom

    def gradients_at_quadrature(self, order=None):
        geom = self.space.geometry(order)
        local = self.coeffs[self.space.mesh.elements]
        return np.einsum("el,eqld->eqd", local, geom.tangent_grads), geom

    def __call__(self, element, ref_point):
        sv = self.space.mesh.reference.shape_values(
            np.atleast_2d(ref_point)
        )[0]
        return float(self.coeffs[self.space.mesh.elements[element]] @ sv)


def lift_function(u, lifted_space=None):
    """View a Gamma_h function as its lift on Gamma (same nodal coefficients)."""
    if u.space.tag != DISCRETE:
        raise ValueError("lift expects a function on the discrete surface")
    space = lifted_space or FeSpace(u.space.mesh, LIFTED)
    return FeFunction(space, u.coeffs.copy())


def inverse_lift_function(u, discrete_space=None):
    if u.space.tag != LIFTED:
        raise ValueError("inverse lift expects a function on the lifted surface")
    space = discrete_space or FeSpace(u.space.mesh, DISCRETE)
    return FeFunction(space, u.coeffs.copy())


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble_mass(space, order=None):
    geom = space.geometry(order)
    sv = geom.shape_values
    local = np.einsum("eq,qi,qj->eij", geom.weights, sv, sv)
    return space.pattern().assemble(local)


def assemble_stiffness(space, order=None):
    geom = space.geometry(order)
    local = np.einsum("eq,eqid,eqjd->eij", geom.weights, geom.tangent_grads,
                      geom.tangent_grads)
    return space.pattern().assemble(local)


def _call_spatial(fn, t, pts):
    flat = pts.reshape(-1, pts.shape[-1])
    try:
        vals = fn(t, flat) if t is not None else fn(flat)
    except TypeError:
        vals = fn(flat)
    return np.asarray(vals, dtype=float).reshape(pts.shape[:-1])


def load_vector(space, fn, t=None, order=None):
    """b_i = integral of fn * phi_i over the space's surface."""
    return load_from_geometry(space.geometry(order), space.mesh.elements,
                              space.num_dofs, fn, t)


def load_from_geometry(geom, elements, n_dofs, fn, t=None):
    fvals = _call_spatial(fn, t, geom.points)
    local = np.einsum("eq,eq,qi->ei", geom.weights, fvals, geom.shape_values)
    out = np.zeros(n_dofs)
    np.add.at(out, elements.ravel(), local.ravel())
    return out


def integrate(space, fn=None, t=None, order=None):
    """Integral of a callable (or of 1) over the space's surface."""
    geom = space.geometry(order)
    if fn is None:
        return float(geom.weights.sum())
    return float(np.sum(geom.weights * _call_spatial(fn, t, geom.points)))


def surface_measure(space, order=None):
    return integrate(space, None, order=order)


# ---------------------------------------------------------------------------
# projections and discrete operators
# ---------------------------------------------------------------------------


def l2_project(space, fn, t=None, order=None, mass=None, tol=1e-12):
    b = load_vector(space, fn, t=t, order=order)
    mass = assemble_mass(space) if mass is None else mass
    coeffs, _ = cg_solve(mass, b, tol=tol)
    return FeFunction(space, coeffs)


def interpolate(space, fn, t=None):
    vals = _call_spatial(fn, t, space.dof_points())
    return FeFunction(space, vals)


def discrete_laplacian(u, mass=None, stiffness=None, tol=1e-12):
    """w with (w, chi) = -(grad u, grad chi) for all chi, i.e. M w = -A u."""
    space = u.space
    mass = assemble_mass(space) if mass is None else mass
    stiffness = assemble_stiffness(space) if stiffness is None else stiffness
    coeffs, _ = cg_solve(mass, -stiffness.matvec(u.coeffs), tol=tol)
    return FeFunction(space, coeffs)


def delta_load(space, x0):
    """Vector e with e_i = phi_i(x0); the dual pairing of the point mass."""
    element, ref = locate_point(space.mesh, x0)
    sv = space.mesh.reference.shape_values(np.atleast_2d(ref))[0]
    e = np.zeros(space.num_dofs)
    np.add.at(e, space.mesh.elements[element], sv)
    return e


def discrete_delta(space, x0, mass=None, tol=1e-12):
    """L2 projection of the point mass at x0: reproduces chi(x0) against chi."""
    e = delta_load(space, x0)
    mass = assemble_mass(space) if mass is None else mass
    coeffs, _ = cg_solve(mass, e, tol=tol)
    return FeFunction(space, coeffs)


def ritz_project(space, fn, grad_fn, t=None, order=None, tol=1e-12,
                 mass=None, stiffness=None):
    """Projection with respect to the (grad, grad) + (., .) inner product.

    grad_fn supplies the ambient gradient of fn; only its tangential part
    enters, because the test gradients are tangential already.
    """
    geom = space.geometry(order)
    mass = assemble_mass(space, order=order) if mass is None else mass
    stiffness = assemble_stiffness(space, order=order) if stiffness is None else stiffness
    fvals = _call_spatial(fn, t, geom.points)
    flat = geom.points.reshape(-1, geom.points.shape[-1])
    try:
        gvals = grad_fn(t, flat) if t is not None else grad_fn(flat)
    except TypeError:
        gvals = grad_fn(flat)
    gvals = np.asarray(gvals, dtype=float).reshape(geom.points.shape)
    local = np.einsum("eq,eq,qi->ei", geom.weights, fvals, geom.shape_values)
    local += np.einsum("eq,eqd,eqid->ei", geom.weights, gvals, geom.tangent_grads)
    b = np.zeros(space.num_dofs)
    np.add.at(b, space.mesh.elements.ravel(), local.ravel())
    system = stiffness.scaled_add(1.0, mass)
    coeffs, _ = cg_solve(system, b, tol=tol)
    return FeFunction(space, coeffs)


# ---------------------------------------------------------------------------
# geometric prefactors of the discrete-to-exact change of variables
# ---------------------------------------------------------------------------


@dataclass
class PrefactorField:
    """Pointwise measure ratio and gradient transform of the lift.

    measure_ratio a(x) satisfies  int_{Gamma_h} u v = int_Gamma a u^l v^l;
    gradient_transform B(x) satisfies the same identity for tangential
    gradients.  Deviations are measured against 1 and against the tangential
    projector (the identity on the tangent space).
    """

    points: np.ndarray
    measure_ratio: np.ndarray
    gradient_transform: np.ndarray
    sup_measure_dev: float
    sup_gradient_dev: float
    min_measure_ratio: float


def compute_prefactors(mesh, order=None):
    m = mesh.dimension
    d = m + 1
    if order is None:
        order = default_quad_order(mesh.degree, m, LIFTED)
    # evaluate at quadrature points plus the reference lattice nodes
    rule = reference_rule(m, order)
    extra = mesh.reference.nodes
    ref_pts = np.vstack([rule.points, extra])
    disc = element_geometry(mesh, DISCRETE, order=order, ref_points=ref_pts)
    lift = element_geometry(mesh, LIFTED, order=order, ref_points=ref_pts)
    ratio = disc.metric_factor / lift.metric_factor

    # B = ratio * T Ghat^{-1} T^T with T the lifted tangent map and Ghat the
    # discrete first fundamental form; supported on the tangent space of Gamma
    sv = mesh.reference.shape_values(ref_pts)
    sg = mesh.reference.shape_gradients(ref_pts)
    coords = mesh.element_coords()
    jac_h = np.einsum("qlm,eld->eqdm", sg, coords)
    det_h, inv_h = _metric(jac_h, m)
    flat = np.einsum("ql,eld->eqd", sv, coords).reshape(-1, d)
    dq = mesh.surface.projection_jacobian(mesh.time, flat).reshape(
        jac_h.shape[:2] + (d, d)
    )
    tmap = np.einsum("eqij,eqjm->eqim", dq, jac_h)
    bfield = ratio[..., None, None] * np.einsum(
        "eqim,eqmn,eqjn->eqij", tmap, inv_h, tmap
    )

    y = mesh.surface.project(mesh.time, flat).reshape(jac_h.shape[:2] + (d,))
    nu = mesh.surface.normal(mesh.time, y.reshape(-1, d)).reshape(y.shape)
    tangential_id = np.eye(d) - nu[..., :, None] * nu[..., None, :]
    dev = np.linalg.eigvalsh(bfield - tangential_id)
    return PrefactorField(
        points=y.reshape(-1, d),
        measure_ratio=ratio.reshape(-1),
        gradient_transform=bfield.reshape(-1, d, d),
        sup_measure_dev=float(np.abs(ratio - 1.0).max()),
        sup_gradient_dev=float(np.abs(dev).max()),
        min_measure_ratio=float(ratio.min()),
    )


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _check_exponent(q):
    if q != math.inf and not q >= 1:
        raise InvalidExponent(f"norm exponent must be >= 1 or inf, got {q}")


def norm_lq(u, q, space=None, t=None, order=None):
    """L^q norm over the space's surface; q = inf takes the max over
    quadrature points and nodes (documented approximation)."""
    _check_exponent(q)
    if isinstance(u, FeFunction):
        vals, geom = u.values_at_quadrature(order)
        if q == math.inf:
            return float(max(np.abs(vals).max(), np.abs(u.coeffs).max()))
        return float(np.sum(geom.weights * np.abs(vals) ** q) ** (1.0 / q))
    if space is None:
        raise ValueError("a space is required to integrate a callable")
    geom = space.geometry(order)
    vals = _call_spatial(u, t, geom.points)
    if q == math.inf:
        return float(np.abs(vals).max())
    return float(np.sum(geom.weights * np.abs(vals) ** q) ** (1.0 / q))


def norm_w1q(u, q, order=None):
    """(|u|_q^q + |grad u|_q^q)^(1/q); max of the two sups for q = inf."""
    _check_exponent(q)
    vals, geom = u.values_at_quadrature(order)
    grads, _ = u.gradients_at_quadrature(order)
    gmag = np.linalg.norm(grads, axis=-1)
    if q == math.inf:
        return float(max(np.abs(vals).max(), gmag.max(), np.abs(u.coeffs).max()))
    total = np.sum(geom.weights * (np.abs(vals) ** q + gmag**q))
    return float(total ** (1.0 / q))


def seminorm_h1(u, order=None):
    grads, geom = u.gradients_at_quadrature(order)
    gmag2 = np.sum(grads * grads, axis=-1)
    return float(math.sqrt(np.sum(geom.weights * gmag2)))


def element_values(coeffs, elements, geom):
    """Values of a coefficient vector at the geometry's quadrature points."""
    return coeffs[elements] @ geom.shape_values.T


def _abs_power(vals, q):
    # np.power is the per-step hot spot for fractional q; special-case the
    # small integer exponents the studies actually use
    if q == 2.0:
        return vals * vals
    if q == 4.0:
        sq = vals * vals
        return sq * sq
    if q == 1.0:
        return np.abs(vals)
    if q == 3.0:
        return vals * vals * np.abs(vals)
    return np.abs(vals) ** q


def values_norm_lq(vals, coeffs, geom, q):
    if q == math.inf:
        return float(max(np.abs(vals).max(), np.abs(coeffs).max()))
    return float(np.sum(geom.weights * _abs_power(vals, q)) ** (1.0 / q))


def element_norms_lq(coeffs, elements, geom, q):
    """L^q norm of a coefficient vector against a prebuilt geometry table."""
    return values_norm_lq(element_values(coeffs, elements, geom), coeffs, geom, q)


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------


def _inside_reference(ref, dim, tol=1e-9):
    if dim == 1:
        return -tol <= ref[0] <= 1.0 + tol
    return ref[0] >= -tol and ref[1] >= -tol and ref[0] + ref[1] <= 1.0 + tol


def locate_point(mesh, x, tol=1e-10, candidates=16):
    """Find (element, reference coordinates) of a point on the mesh surface.

    Gauss-Newton on |F_K(xi) - x|^2 over the nearest elements first, then over
    all elements; raises PointNotOnMesh when no element contains the point.
    """
    x = np.asarray(x, dtype=float)
    centers = mesh.element_coords().mean(axis=1)
    order = np.argsort(np.linalg.norm(centers - x, axis=-1))
    scale = max(1.0, float(np.linalg.norm(x)))
    trial_sets = [order[:candidates], order[candidates:]]
    ref_el = mesh.reference
    start = np.full(mesh.dimension, 1.0 / 3.0 if mesh.dimension == 2 else 0.5)
    for trial in trial_sets:
        for e in trial:
            coords = mesh.nodes[mesh.elements[e]]
            ref = start.copy()
            ok = False
            for _ in range(30):
                sv = ref_el.shape_values(ref[None, :])[0]
                sg = ref_el.shape_gradients(ref[None, :])[0]
                pos = sv @ coords
                resid = x - pos
                jac = coords.T @ sg
                step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
                ref = ref + step
                if np.linalg.norm(step) < 1e-14:
                    ok = True
                    break
            if not ok:
                sv = ref_el.shape_values(ref[None, :])[0]
                pos = sv @ coords
            final = ref_el.shape_values(ref[None, :])[0] @ coords
            if (
                np.linalg.norm(final - x) <= tol * scale
                and _inside_reference(ref, mesh.dimension)
            ):
                ref = np.clip(ref, 0.0, 1.0)
                if mesh.dimension == 2 and ref.sum() > 1.0:
                    ref = ref / ref.sum()
                return int(e), ref
    raise PointNotOnMesh(f"point {x} not inside any element")


def element_point(mesh, element, ref):
    """Map a reference point of one element to physical coordinates."""
    sv = mesh.reference.shape_values(np.atleast_2d(ref))[0]
    return sv @ mesh.nodes[mesh.elements[element]]


def radial_inverse_lift(mesh, points, tol=1e-12):
    """Inverse of the closest-point projection restricted to Gamma_h, for
    surfaces with radial projection (circle/sphere families).

    Returns (elements, ref_coords) such that mapping the reference points
    through the element maps gives the Gamma_h points projecting onto
    ``points``.
    """
    surface = mesh.surface
    if not hasattr(surface, "radius"):
        raise UnsupportedSurface("inverse lift by ray casting needs a radial kind")
    pts = np.asarray(points, dtype=float)
    rays = pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    verts = mesh.vertex_coords()
    d = pts.shape[-1]
    mats = np.swapaxes(verts, 1, 2)  # (E, d, nverts) with nverts == d
    inv = np.linalg.inv(mats)
    lam = np.einsum("eij,pj->pei", inv, rays)
    lam_sum = lam.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bary = lam / lam_sum[..., None]
    bary = np.where((lam_sum > 0)[..., None], bary, -1.0)
    score = bary.min(axis=-1)
    elems = np.argmax(score, axis=-1)
    n = pts.shape[0]
    refs = np.empty((n, mesh.dimension))
    ref_el = mesh.reference
    for i in range(n):
        e = elems[i]
        b = bary[i, e]
        ref = b[1:] if d == 3 else np.array([b[1]])
        ray = rays[i]
        coords = mesh.nodes[mesh.elements[e]]
        proj = np.eye(d) - np.outer(ray, ray)
        for _ in range(40):
            sv = ref_el.shape_values(ref[None, :])[0]
            sg = ref_el.shape_gradients(ref[None, :])[0]
            pos = sv @ coords
            resid = proj @ pos
            if np.linalg.norm(resid) < tol:
                break
            jac = proj @ (coords.T @ sg)
            step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
            ref = ref + step
        refs[i] = ref
    return elems, refs


def evaluate_at(u, elements, refs):
    """Evaluate a finite element function at (element, reference) pairs."""
    mesh = u.space.mesh
    sv = mesh.reference.shape_values(refs)
    local = u.coeffs[mesh.elements[elements]]
    return np.sum(sv * local, axis=-1)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_function_csv(u, path):
    """CSV of (dof id, coordinates, value) with full-precision floats."""
    pts = u.space.dof_points()
    d = pts.shape[1]
    cols = ["dof"] + [f"x{i}" for i in range(d)] + ["value"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(cols) + "\n")
        for i, (p, v) in enumerate(zip(pts, u.coeffs)):
            row = [str(i)] + [format(c, ".17g") for c in p] + [format(v, ".17g")]
            fh.write(",".join(row) + "\n")
