from __future__ import annotations

import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np


class CellGeometry(NamedTuple):
    """Affine maps x = origin + J x_hat for every cell of a mesh.

    .. py:attribute:: origin

        (n_cells, 2) image of the reference vertex (0, 0)

    .. py:attribute:: jacobian

        (n_cells, 2, 2) columns are the two cell edge vectors leaving the origin

    .. py:attribute:: det

        (n_cells,) Jacobian determinants, twice the cell areas

    .. py:attribute:: inverse

        (n_cells, 2, 2) inverse Jacobians
    """

    origin: np.ndarray
    jacobian: np.ndarray
    det: np.ndarray
    inverse: np.ndarray


class Mesh:
    """
        A uniform right-triangle mesh of a square.

        Every square of the n_div x n_div grid is split along its
        lower-left to upper-right diagonal. Vertices and cells are numbered
        row by row, edges are numbered lexicographically by their (lo, hi)
        vertex pair, so the whole layout is a pure function of n_div.
    """

    n_div: int
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray

    def __init__(
        self, n_div: int, vertices: np.ndarray, cells: np.ndarray,
    ):
        self.n_div = n_div
        self.vertices = vertices
        self.cells = cells
        self._geometry: Optional[CellGeometry] = None

        # Local edge k is opposite local vertex k.
        starts = cells[:, [1, 2, 0]]
        ends = cells[:, [2, 0, 1]]
        pairs = np.stack(
            [np.minimum(starts, ends), np.maximum(starts, ends)], axis=-1
        ).reshape(-1, 2)

        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)

        self.edges = edges
        self.cell_edges = inverse.reshape(-1, 3)
        self.cell_edge_signs = np.where(starts < ends, 1, -1).astype(np.int64)

        incidence = np.bincount(inverse, minlength=len(edges))
        assert np.all(
            (incidence == 1) | (incidence == 2)
        ), "Every edge must be shared by one or two cells"

        self.boundary_edges = np.flatnonzero(incidence == 1)
        self.boundary_vertices = np.unique(edges[self.boundary_edges])

    @property
    def h(self) -> float:
        return 1.0 / self.n_div

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def cell_geometry(self) -> CellGeometry:
        if self._geometry is not None:
            return self._geometry
        corners = self.vertices[self.cells]
        origin = corners[:, 0, :]
        jacobian = np.stack(
            [corners[:, 1, :] - origin, corners[:, 2, :] - origin], axis=-1
        )
        det = np.linalg.det(jacobian)
        if np.any(np.abs(det) < 1e-300):
            raise ValueError("Mesh contains a degenerate cell")
        self._geometry = CellGeometry(
            origin, jacobian, det, np.linalg.inv(jacobian)
        )
        return self._geometry

    def cell_areas(self) -> np.ndarray:
        return 0.5 * self.cell_geometry().det

    def edge_lengths(self) -> np.ndarray:
        tangents = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(tangents, axis=1)

    def edge_normals(self) -> np.ndarray:
        """
        Unit normals of the global edge orientation.

        The tangent runs from the lower to the higher vertex index and the
        normal is that tangent rotated clockwise, which is the outward normal
        of any counterclockwise cell that traverses the edge from lo to hi.
        """
        tangents = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
        return normals / np.linalg.norm(normals, axis=1)[:, None]

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, shift: Sequence[float]) -> Mesh:
        return Mesh(
            self.n_div,
            self.vertices + np.asarray(shift, dtype=float)[None, :],
            self.cells.copy(),
        )

    def export(self, path: str) -> None:
        """
        Write the mesh as plain text: a header line holding n_div, then one
        line per vertex and one line per cell.
        """
        with open(path, "w") as out:
            out.write(f"{self.n_div}\n")
            for x, y in self.vertices:
                out.write(f"{x!r} {y!r}\n")
            for a, b, c in self.cells:
                out.write(f"{a} {b} {c}\n")


def build_unit_square(n_div: int) -> Mesh:
    """Build the uniform mesh of [0, 1]^2 with n_div subdivisions per side.

    Args:
        n_div (int): The number of subdivisions per side, h = 1 / n_div.

    Returns:
        The :class:`Mesh`.
    """
    if int(n_div) != n_div or n_div < 1:
        raise ValueError(f"Invalid number of subdivisions {n_div}")
    n_div = int(n_div)

    coords = np.arange(n_div + 1) / n_div
    xs, ys = np.meshgrid(coords, coords)
    vertices = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)

    rows, columns = np.meshgrid(np.arange(n_div), np.arange(n_div), indexing="ij")
    lower_left = (rows * (n_div + 1) + columns).reshape(-1)
    lower_right = lower_left + 1
    upper_right = lower_left + n_div + 2
    upper_left = lower_left + n_div + 1

    cells = np.empty((2 * n_div * n_div, 3), dtype=np.int64)
    cells[0::2] = np.stack([lower_left, lower_right, upper_right], axis=1)
    cells[1::2] = np.stack([lower_left, upper_right, upper_left], axis=1)

    return Mesh(n_div, vertices, cells)


def mesh_hierarchy(levels: Sequence[int]) -> List[Mesh]:
    if len(levels) == 0:
        raise ValueError("Mesh hierarchy needs at least one level")
    for coarse, fine in zip(levels, levels[1:]):
        if fine <= coarse:
            raise ValueError(
                f"Mesh levels must be strictly increasing, got {list(levels)}"
            )

    meshes = [build_unit_square(n_div) for n_div in levels]
    logging.info(
        "Built %d meshes with %s cells",
        len(meshes),
        [mesh.num_cells for mesh in meshes],
    )
    return meshes
