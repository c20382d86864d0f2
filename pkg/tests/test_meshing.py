import math

import numpy as np
import pytest

from esfem.errors import DegenerateMesh, FlowEvaluationFailure, UnsupportedSurface
from esfem.fem import FeSpace, assemble_mass, surface_measure
from esfem.meshing import (
    SurfaceMesh,
    build_circle_mesh,
    build_sphere_mesh,
    evolve_mesh,
    quasi_uniformity_report,
    read_mesh_text,
    write_mesh_text,
    write_mesh_vtk,
)
from esfem.surfaces import Circle, ScaledSphereFlow, Sphere, Torus


def polygon_perimeter(n):
    return 2 * n * math.sin(math.pi / n)


def dense_arclength(mesh, samples=4000):
    """Independent arc-length oracle: trapezoid over a dense parametric
    sampling of each element map."""
    total = 0.0
    xi = np.linspace(0.0, 1.0, samples).reshape(-1, 1)
    sv = mesh.reference.shape_values(xi)
    for el in mesh.elements:
        pts = sv @ mesh.nodes[el]
        total += np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    return total


def test_circle_mesh_square_perimeter():
    mesh = build_circle_mesh(Circle(), 4, 1)
    assert abs(dense_arclength(mesh) - 4 * math.sqrt(2)) < 1e-9
    assert mesh.num_nodes == 4


def test_circle_mesh_polygon_perimeter():
    mesh = build_circle_mesh(Circle(), 64, 1)
    assert abs(dense_arclength(mesh) - polygon_perimeter(64)) < 1e-8


def test_circle_mesh_degree2_measure_order():
    # curved measure converges to 2*pi at observed order >= 3.5
    errors, hs = [], []
    for n in (16, 32, 64):
        mesh = build_circle_mesh(Circle(), n, 2)
        space = FeSpace(mesh)
        measure = surface_measure(space)
        oracle = dense_arclength(mesh, samples=6000)
        assert abs(measure - oracle) < 1e-6
        errors.append(abs(measure - 2 * math.pi))
        hs.append(mesh.h)
    order = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert order >= 3.5


def test_circle_mesh_rejects_small_and_bad_degree():
    with pytest.raises(DegenerateMesh):
        build_circle_mesh(Circle(), 3, 1)
    with pytest.raises(ValueError):
        build_circle_mesh(Circle(), 8, 4)
    with pytest.raises(UnsupportedSurface):
        build_circle_mesh(Sphere(), 8, 1)


def test_icosphere_combinatorics():
    mesh = build_sphere_mesh(Sphere(), 0, 1)
    assert mesh.num_elements == 20
    assert mesh.num_nodes == 12
    assert build_sphere_mesh(Sphere(), 2, 1).num_elements == 320


def test_icosphere_area_convergence():
    errors, hs = [], []
    for level in (1, 2, 3):
        mesh = build_sphere_mesh(Sphere(), level, 1)
        area = surface_measure(FeSpace(mesh))
        assert area < 4 * math.pi
        errors.append(4 * math.pi - area)
        hs.append(mesh.h)
    order = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert 1.7 <= order <= 2.3


def test_meshes_sit_on_surface_and_oriented():
    for mesh in (
        build_circle_mesh(Circle(), 32, 2),
        build_sphere_mesh(Sphere(), 2, 1),
        build_sphere_mesh(Sphere(), 1, 2),
    ):
        assert mesh.node_surface_residual() <= 1e-12
        assert mesh.orientation_defects() == 0


def test_refinement_roughly_halves_h():
    prev = build_circle_mesh(Circle(), 16, 1).h
    for n in (32, 64, 128):
        h = build_circle_mesh(Circle(), n, 1).h
        assert 0.45 <= h / prev <= 0.55
        prev = h
    prev = build_sphere_mesh(Sphere(), 1, 1).h
    for level in (2, 3):
        h = build_sphere_mesh(Sphere(), level, 1).h
        assert 0.45 <= h / prev <= 0.55
        prev = h


def test_evolve_scaling_flow():
    surface = ScaledSphereFlow(dimension=2)
    mesh = build_sphere_mesh(surface, 1, 1)
    node = mesh.nodes[0].copy()
    moved = evolve_mesh(mesh, 0.25)
    assert np.allclose(moved.nodes[0], 1.25 * node, atol=1e-14)
    assert np.array_equal(evolve_mesh(mesh, 0.0).nodes, mesh.nodes)
    # r(0.5) = 1 again
    assert np.abs(evolve_mesh(mesh, 0.5).nodes - mesh.nodes).max() <= 1e-13
    assert moved.node_surface_residual() <= 1e-12


def test_evolve_roundtrip_via_inverse_flow():
    surface = ScaledSphereFlow(dimension=2)
    mesh = build_sphere_mesh(surface, 1, 1)
    moved = evolve_mesh(mesh, 0.37)
    back = surface.inverse_position(0.37, moved.nodes)
    assert np.abs(back - mesh.nodes).max() <= 1e-12


def test_evolve_outside_horizon_fails():
    surface = ScaledSphereFlow(dimension=2, horizon=1.0)
    mesh = build_sphere_mesh(surface, 0, 1)
    with pytest.raises(FlowEvaluationFailure):
        evolve_mesh(mesh, 2.0)


def test_quasi_uniformity_uniform_circle():
    report = quasi_uniformity_report(build_circle_mesh(Circle(), 24, 1))
    assert abs(report["size_ratio"] - 1.0) <= 1e-12


def test_quasi_uniformity_icosphere():
    report = quasi_uniformity_report(build_sphere_mesh(Sphere(), 2, 1))
    assert report["size_ratio"] <= 1.5
    assert report["size_ratio"] >= 1.0


def test_quasi_uniformity_split_element_fixture():
    # constructed counterexample: one element of the uniform mesh split in two
    surface = Circle()
    n = 16
    theta = 2 * math.pi * np.arange(n) / n
    theta = np.sort(np.append(theta, math.pi / n))  # bisect the first element
    nodes = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    elements = np.array([[i, (i + 1) % len(theta)] for i in range(len(theta))])
    mesh = SurfaceMesh(surface, 1, nodes, elements)
    report = quasi_uniformity_report(mesh)
    assert abs(report["size_ratio"] - 2.0) <= 0.2


def test_mesh_text_roundtrip(tmp_path):
    surface = ScaledSphereFlow(dimension=2)
    mesh = evolve_mesh(build_sphere_mesh(surface, 1, 2), 0.3)
    path = tmp_path / "mesh.txt"
    write_mesh_text(mesh, path)
    back = read_mesh_text(path, surface)
    assert back.degree == 2 and back.time == 0.3
    assert np.array_equal(back.nodes, mesh.nodes)
    assert np.array_equal(back.ref_nodes, mesh.ref_nodes)
    assert np.array_equal(back.elements, mesh.elements)


def test_vtk_export_structure(tmp_path):
    mesh = build_sphere_mesh(Sphere(), 2, 1)
    path = tmp_path / "mesh.vtk"
    write_mesh_vtk(mesh, path, point_data={"height": mesh.nodes[:, 2]})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DATASET POLYDATA" in text[3]
    polygons = [ln for ln in text if ln.startswith("POLYGONS")]
    assert polygons and int(polygons[0].split()[1]) == 320
    assert any(ln.startswith("POINT_DATA") for ln in text)

    line_mesh = build_circle_mesh(Circle(), 8, 1)
    path2 = tmp_path / "circle.vtk"
    write_mesh_vtk(line_mesh, path2)
    assert any(ln.startswith("LINES 8") for ln in path2.read_text().splitlines())


def test_torus_has_no_level_builder():
    with pytest.raises(UnsupportedSurface):
        build_sphere_mesh(Torus(), 1, 1)
