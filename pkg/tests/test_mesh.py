import pytest
import numpy as np

from stokes_biot.mesh import build_unit_square, mesh_hierarchy

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def test_counts(mesh4):
    assert mesh4.num_vertices == 25
    assert mesh4.num_cells == 32
    assert mesh4.num_edges == 3 * 16 + 2 * 4
    assert len(mesh4.boundary_edges) == 16
    assert len(mesh4.boundary_vertices) == 16
    assert mesh4.h == 0.25


def test_cells_are_counterclockwise(mesh4):
    areas = mesh4.cell_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 1.0) < 1e-14
    assert np.allclose(areas, 1.0 / 32)


def test_interior_edges_have_opposite_signs(mesh4):
    sign_sums = np.bincount(
        mesh4.cell_edges.reshape(-1),
        weights=mesh4.cell_edge_signs.reshape(-1),
        minlength=mesh4.num_edges,
    )
    interior = np.setdiff1d(np.arange(mesh4.num_edges), mesh4.boundary_edges)
    assert np.all(sign_sums[interior] == 0)
    assert np.all(np.abs(sign_sums[mesh4.boundary_edges]) == 1)


def test_edges_are_sorted_pairs(mesh4):
    assert np.all(mesh4.edges[:, 0] < mesh4.edges[:, 1])
    order = np.lexsort((mesh4.edges[:, 1], mesh4.edges[:, 0]))
    assert np.all(order == np.arange(mesh4.num_edges))


def test_edge_normals(mesh4):
    normals = mesh4.edge_normals()
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)

    midpoints = mesh4.vertices[mesh4.edges].mean(axis=1)
    bottom = np.isclose(midpoints[:, 1], 0.0)
    assert bottom.sum() == 4
    assert np.allclose(normals[bottom], [0.0, -1.0])


def test_geometry(mesh2):
    geometry = mesh2.cell_geometry()
    assert geometry.jacobian.shape == (8, 2, 2)
    identity = np.einsum("cij,cjk->cik", geometry.jacobian, geometry.inverse)
    assert np.allclose(identity, np.eye(2))
    assert np.allclose(geometry.det, 0.25)


def test_deterministic():
    first = build_unit_square(3)
    second = build_unit_square(3)
    assert np.array_equal(first.cells, second.cells)
    assert np.array_equal(first.edges, second.edges)
    assert np.array_equal(first.cell_edges, second.cell_edges)


def test_invalid_subdivisions():
    with pytest.raises(ValueError):
        build_unit_square(0)
    with pytest.raises(ValueError):
        build_unit_square(2.5)


def test_hierarchy():
    meshes = mesh_hierarchy([2, 4, 8])
    assert [mesh.n_div for mesh in meshes] == [2, 4, 8]
    with pytest.raises(ValueError):
        mesh_hierarchy([])
    with pytest.raises(ValueError):
        mesh_hierarchy([8, 4])


def test_translated(mesh2):
    moved = mesh2.translated((0.5, -1.0))
    assert np.allclose(moved.vertices, mesh2.vertices + [0.5, -1.0])
    assert np.allclose(moved.cell_areas(), mesh2.cell_areas())
    assert np.array_equal(moved.cell_edges, mesh2.cell_edges)


def test_export(mesh2, tmp_path):
    path = str(tmp_path / "mesh.txt")
    mesh2.export(path)
    with open(path) as file:
        lines = file.read().splitlines()
    assert lines[0] == "2"
    assert len(lines) == 1 + mesh2.num_vertices + mesh2.num_cells
    assert lines[-1].split() == [str(v) for v in mesh2.cells[-1]]
