from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Callable, Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse
import scipy.sparse.linalg

from . import refelem
from .mesh import Mesh

SpaceKind = Union[
    Literal["P1v"],
    Literal["P2v"],
    Literal["P3v"],
    Literal["P3s"],
    Literal["RT0"],
    Literal["DG0"],
]

BoundaryKind = Union[Literal["dirichlet"], Literal["normal"], Literal["none"]]

ExactField = Callable[[np.ndarray], np.ndarray]

_FAMILIES: Dict[str, Tuple[refelem.Family, int]] = {
    "P1v": ("P1", 2),
    "P2v": ("P2", 2),
    "P3v": ("P3", 2),
    "P3s": ("P3", 1),
    "RT0": ("RT0", 1),
    "DG0": ("DG0", 1),
}

_DEFAULT_BOUNDARY: Dict[str, BoundaryKind] = {
    "P1v": "normal",
    "P2v": "dirichlet",
    "P3v": "none",
    "P3s": "none",
    "RT0": "normal",
    "DG0": "none",
}

# Cells are tabulated in chunks so high order evaluations stay bounded in memory.
CELL_CHUNK = 4096


###########################################
# Function spaces
###########################################


class FunctionSpace:
    """
        A global finite element space on a mesh.

        Vector Lagrange spaces are stored component-blocked: all x-component
        DOFs first, then all y-component DOFs. RT0 DOFs are edge fluxes in the
        direction of the global edge normal.
    """

    kind: SpaceKind
    mesh: Mesh
    family: refelem.Family
    components: int
    boundary: BoundaryKind
    scalar_dof_count: int
    dof_count: int
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    constrained_dofs: np.ndarray

    def __init__(self, kind: SpaceKind, mesh: Mesh, boundary: BoundaryKind):
        self.kind = kind
        self.mesh = mesh
        self.family, self.components = _FAMILIES[kind]
        self.boundary = boundary

        scalar_cell_dofs = _scalar_cell_dofs(self.family, mesh)
        self.scalar_dof_count = int(scalar_cell_dofs.max()) + 1

        if self.components == 2:
            self.cell_dofs = np.concatenate(
                [scalar_cell_dofs, scalar_cell_dofs + self.scalar_dof_count], axis=1
            )
        else:
            self.cell_dofs = scalar_cell_dofs
        self.dof_count = self.components * self.scalar_dof_count

        if self.family == "RT0":
            self.cell_signs = mesh.cell_edge_signs.astype(float)
        else:
            self.cell_signs = np.ones(self.cell_dofs.shape)

        self.constrained_dofs = self._constrained_dofs()

    @property
    def value_rank(self) -> int:
        return 1 if self.components == 2 or self.family == "RT0" else 0

    @property
    def is_lagrange(self) -> bool:
        return self.family in ("P1", "P2", "P3")

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def __repr__(self) -> str:
        return (
            f"FunctionSpace({self.kind}, n_div={self.mesh.n_div}, "
            f"dofs={self.dof_count}, constrained={len(self.constrained_dofs)})"
        )

    def node_coordinates(self) -> np.ndarray:
        """Physical coordinates of every scalar DOF of a Lagrange space."""
        if not self.is_lagrange:
            raise ValueError(f"Space {self.kind} has no nodal points")
        geometry = self.mesh.cell_geometry()
        local = refelem.reference_nodes(self.family)
        physical = geometry.origin[:, None, :] + np.einsum(
            "cij,nj->cni", geometry.jacobian, local
        )
        scalar_dofs = self.cell_dofs[:, : len(local)]
        coordinates = np.empty((self.scalar_dof_count, 2))
        coordinates[scalar_dofs.reshape(-1)] = physical.reshape(-1, 2)
        return coordinates

    def _constrained_dofs(self) -> np.ndarray:
        mesh = self.mesh
        if self.boundary == "none":
            return np.zeros(0, dtype=np.int64)

        if self.family == "RT0":
            if self.boundary != "normal":
                raise ValueError("RT0 only supports normal flux constraints")
            return mesh.boundary_edges.copy()

        if self.family == "DG0":
            raise ValueError("DG0 carries no essential boundary conditions")

        coordinates = self.node_coordinates()
        lower, upper = mesh.bounds()
        on_side = [
            np.isclose(coordinates[:, axis], lower[axis], atol=1e-12)
            | np.isclose(coordinates[:, axis], upper[axis], atol=1e-12)
            for axis in range(2)
        ]
        on_boundary = on_side[0] | on_side[1]

        constrained = []
        for component in range(self.components):
            if self.boundary == "dirichlet":
                mask = on_boundary
            else:
                # Sides are axis aligned, so z.n = 0 fixes one Cartesian component.
                mask = on_side[component]
            constrained.append(
                np.flatnonzero(mask) + component * self.scalar_dof_count
            )
        return np.sort(np.concatenate(constrained))

    def tabulate(
        self, points: np.ndarray, cells: Optional[slice] = None
    ) -> refelem.BasisValues:
        """
        Tabulate the local basis of every cell (or a slice of cells) at the
        given reference points, with vector Lagrange components expanded.
        """
        if cells is None:
            cells = slice(0, self.mesh.num_cells)
        geometry = _geometry_slice(self.mesh, cells)
        reference = refelem.eval_basis(self.family, points)
        physical = refelem.push_forward(
            self.family, geometry, reference, self.cell_signs[cells]
        )
        if self.components == 1:
            return physical

        scalar_values = physical.values
        scalar_gradients = physical.gradients
        num_cells, num_points, num_local = scalar_values.shape

        values = np.zeros((num_cells, num_points, 2 * num_local, 2))
        gradients = np.zeros((num_cells, num_points, 2 * num_local, 2, 2))
        for component in range(2):
            block = slice(component * num_local, (component + 1) * num_local)
            values[:, :, block, component] = scalar_values
            gradients[:, :, block, component, :] = scalar_gradients
        divergence = np.concatenate(
            [scalar_gradients[..., 0], scalar_gradients[..., 1]], axis=2
        )
        return refelem.BasisValues(values, gradients, divergence)


def _geometry_slice(mesh: Mesh, cells: slice):
    geometry = mesh.cell_geometry()
    return type(geometry)(*(array[cells] for array in geometry))


def _scalar_cell_dofs(family: refelem.Family, mesh: Mesh) -> np.ndarray:
    num_vertices = mesh.num_vertices
    num_edges = mesh.num_edges
    cell_edges = mesh.cell_edges

    if family == "DG0":
        return np.arange(mesh.num_cells)[:, None]
    if family == "RT0":
        return cell_edges.copy()
    if family == "P1":
        return mesh.cells.copy()
    if family == "P2":
        return np.concatenate([mesh.cells, num_vertices + cell_edges], axis=1)
    if family == "P3":
        # Each edge holds two DOFs, the one nearer the lower vertex index first.
        first = num_vertices + 2 * cell_edges
        forward = mesh.cell_edge_signs > 0
        near_start = np.where(forward, first, first + 1)
        near_end = np.where(forward, first + 1, first)
        edge_dofs = np.stack([near_start, near_end], axis=2).reshape(-1, 6)
        bubbles = num_vertices + 2 * num_edges + np.arange(mesh.num_cells)
        return np.concatenate([mesh.cells, edge_dofs, bubbles[:, None]], axis=1)
    raise ValueError(f"Invalid element family {family}")


def build_space(
    kind: SpaceKind, mesh: Mesh, boundary: Optional[BoundaryKind] = None
) -> FunctionSpace:
    """Build a global function space.

    Args:
        kind (str): One of P1v, P2v, P3v, P3s, RT0, DG0.
        mesh (:class:`Mesh`): The mesh to build on.
        boundary (str): dirichlet, normal or none. Defaults to u = 0 for P2v,
            z.n = 0 for the flux spaces P1v and RT0, and none otherwise.

    Returns:
        The :class:`FunctionSpace`.
    """
    if kind not in _FAMILIES:
        raise ValueError(f"Invalid space kind {kind}")
    if boundary is None:
        boundary = _DEFAULT_BOUNDARY[kind]
    if boundary not in ("dirichlet", "normal", "none"):
        raise ValueError(f"Invalid boundary condition {boundary}")
    return FunctionSpace(kind, mesh, boundary)


###########################################
# Fields
###########################################


class Field(ABC):
    """
        Anything that can be evaluated at reference points on every cell of a
        mesh: discrete fields, analytic closures and linear combinations.
    """

    mesh: Mesh
    value_rank: int

    @abstractmethod
    def values(self, points: np.ndarray, cells: slice) -> np.ndarray:
        """(cells, points) for scalars, (cells, points, 2) for vectors."""

    @abstractmethod
    def gradients(self, points: np.ndarray, cells: slice) -> np.ndarray:
        """(cells, points, 2) for scalars, (cells, points, 2, 2) for vectors."""

    @abstractmethod
    def divergence(self, points: np.ndarray, cells: slice) -> np.ndarray:
        pass

    def __add__(self, other: Field) -> Field:
        return FieldCombination([(1.0, self), (1.0, other)])

    def __sub__(self, other: Field) -> Field:
        return FieldCombination([(1.0, self), (-1.0, other)])

    def __mul__(self, scale: float) -> Field:
        return FieldCombination([(float(scale), self)])

    __rmul__ = __mul__

    def __neg__(self) -> Field:
        return FieldCombination([(-1.0, self)])


def cell_chunks(mesh: Mesh) -> Iterator[slice]:
    for start in range(0, mesh.num_cells, CELL_CHUNK):
        yield slice(start, min(start + CELL_CHUNK, mesh.num_cells))


class DiscreteField(Field):
    """A coefficient vector over a :class:`FunctionSpace`."""

    def __init__(self, space: FunctionSpace, coefficients: np.ndarray):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.dof_count,):
            raise ValueError(
                f"Expected {space.dof_count} coefficients for {space.kind}, "
                f"got {coefficients.shape}"
            )
        self.space = space
        self.coefficients = coefficients
        self.mesh = space.mesh
        self.value_rank = space.value_rank

    def __repr__(self) -> str:
        return f"DiscreteField({self.space.kind}, n_div={self.mesh.n_div})"

    def _local(self, cells: slice) -> np.ndarray:
        return self.coefficients[self.space.cell_dofs[cells]]

    def values(self, points: np.ndarray, cells: slice) -> np.ndarray:
        basis = self.space.tabulate(points, cells)
        return np.einsum("cd,cqd...->cq...", self._local(cells), basis.values)

    def gradients(self, points: np.ndarray, cells: slice) -> np.ndarray:
        basis = self.space.tabulate(points, cells)
        return np.einsum("cd,cqd...->cq...", self._local(cells), basis.gradients)

    def divergence(self, points: np.ndarray, cells: slice) -> np.ndarray:
        basis = self.space.tabulate(points, cells)
        if basis.divergence is None:
            raise ValueError(f"Space {self.space.kind} is not vector valued")
        return np.einsum("cd,cqd->cq", self._local(cells), basis.divergence)

    def __add__(self, other: Field) -> Field:
        if isinstance(other, DiscreteField) and other.space is self.space:
            return DiscreteField(self.space, self.coefficients + other.coefficients)
        return super().__add__(other)

    def __sub__(self, other: Field) -> Field:
        if isinstance(other, DiscreteField) and other.space is self.space:
            return DiscreteField(self.space, self.coefficients - other.coefficients)
        return super().__sub__(other)

    def __mul__(self, scale: float) -> Field:
        return DiscreteField(self.space, float(scale) * self.coefficients)

    __rmul__ = __mul__

    def to_csv(self, path: str) -> None:
        frame = pd.DataFrame(
            {
                "dof": np.arange(self.space.dof_count),
                "coefficient": self.coefficients,
            }
        )
        frame.to_csv(path, index=False, float_format="%.17g")


class AnalyticField(Field):
    """
        Closed-form closures evaluated at the physical images of reference
        points. Gradient and divergence closures are optional.
    """

    def __init__(
        self,
        mesh: Mesh,
        value: ExactField,
        value_rank: int,
        gradient: Optional[ExactField] = None,
        divergence: Optional[ExactField] = None,
    ):
        self.mesh = mesh
        self.value_rank = value_rank
        self._value = value
        self._gradient = gradient
        self._divergence = divergence

    def _physical(self, points: np.ndarray, cells: slice) -> np.ndarray:
        geometry = _geometry_slice(self.mesh, cells)
        return geometry.origin[:, None, :] + np.einsum(
            "cij,qj->cqi", geometry.jacobian, np.asarray(points, dtype=float)
        )

    def _evaluate(
        self, closure: Optional[ExactField], points: np.ndarray, cells: slice
    ) -> np.ndarray:
        if closure is None:
            raise ValueError("Analytic field is missing a derivative closure")
        x = self._physical(points, cells)
        flat = closure(x.reshape(-1, 2))
        return np.asarray(flat).reshape(x.shape[:2] + np.shape(flat)[1:])

    def values(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._evaluate(self._value, points, cells)

    def gradients(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._evaluate(self._gradient, points, cells)

    def divergence(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._evaluate(self._divergence, points, cells)


class FieldCombination(Field):
    def __init__(self, terms: List[Tuple[float, Field]]):
        meshes = {id(field.mesh) for _, field in terms}
        ranks = {field.value_rank for _, field in terms}
        if len(meshes) != 1:
            raise ValueError("Cannot combine fields living on different meshes")
        if len(ranks) != 1:
            raise ValueError("Cannot combine scalar and vector fields")
        self.terms = terms
        self.mesh = terms[0][1].mesh
        self.value_rank = ranks.pop()

    def _combine(self, method: str, points: np.ndarray, cells: slice) -> np.ndarray:
        total = None
        for scale, field in self.terms:
            part = scale * getattr(field, method)(points, cells)
            total = part if total is None else total + part
        return total

    def values(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._combine("values", points, cells)

    def gradients(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._combine("gradients", points, cells)

    def divergence(self, points: np.ndarray, cells: slice) -> np.ndarray:
        return self._combine("divergence", points, cells)


###########################################
# Interpolation and projection
###########################################


def interpolate(exact_field: ExactField, space: FunctionSpace) -> DiscreteField:
    """Interpolate a closed-form field x -> value into a space.

    Lagrange spaces use nodal values, RT0 uses edge fluxes computed with
    2-point Gauss quadrature and DG0 uses cell averages.

    Args:
        exact_field (callable): Maps (n, 2) points to (n,) or (n, 2) values.
        space (:class:`FunctionSpace`): The target space.

    Returns:
        The interpolant as a :class:`DiscreteField`.
    """
    mesh = space.mesh

    if space.is_lagrange:
        nodal = np.asarray(exact_field(space.node_coordinates()), dtype=float)
        if space.components == 2:
            coefficients = np.concatenate([nodal[:, 0], nodal[:, 1]])
        else:
            coefficients = nodal.reshape(-1)
        return DiscreteField(space, coefficients)

    if space.family == "RT0":
        rule = refelem.edge_quadrature(2)
        start = mesh.vertices[mesh.edges[:, 0]]
        tangent = mesh.vertices[mesh.edges[:, 1]] - start
        normals = mesh.edge_normals()
        lengths = mesh.edge_lengths()

        fluxes = np.zeros(mesh.num_edges)
        for s, w in zip(rule.points, rule.weights):
            values = np.asarray(exact_field(start + s * tangent), dtype=float)
            fluxes += w * np.sum(values * normals, axis=1)
        return DiscreteField(space, fluxes * lengths)

    return DiscreteField(space, _cell_averages(exact_field, mesh))


def _cell_averages(field: Union[ExactField, Field], mesh: Mesh) -> np.ndarray:
    rule = refelem.quadrature(8)
    if not isinstance(field, Field):
        field = AnalyticField(mesh, field, value_rank=0)
    if field.value_rank != 0:
        raise ValueError("Only scalar fields can be averaged into DG0")

    averages = np.empty(mesh.num_cells)
    for cells in cell_chunks(mesh):
        values = field.values(rule.points, cells)
        # The reference triangle has area 1/2.
        averages[cells] = 2.0 * values @ rule.weights
    return averages


def l2_project(
    field: Union[ExactField, Field], target: FunctionSpace
) -> DiscreteField:
    """
    L2 projection into a space. DG0 has a diagonal mass matrix, so the
    projection is a cell average; other targets solve with the mass matrix.
    """
    if target.kind == "DG0":
        return DiscreteField(target, _cell_averages(field, target.mesh))

    from .assemble import assemble_form, assemble_functional

    mass = assemble_form("mass", target, target)
    load = assemble_functional(field, target, degree=8)
    coefficients = scipy.sparse.linalg.spsolve(mass.tocsc(), load)
    return DiscreteField(target, coefficients)


def apply_essential_bcs(
    matrix: scipy.sparse.spmatrix,
    rhs: Optional[np.ndarray],
    constrained_dofs: np.ndarray,
) -> Tuple[scipy.sparse.csr_matrix, Optional[np.ndarray]]:
    """
    Eliminate homogeneous essential constraints symmetrically: the rows and
    columns of constrained DOFs are zeroed, their diagonal set to 1 and their
    right-hand side entries set to 0.
    """
    n = matrix.shape[0]
    if matrix.shape[1] != n:
        raise ValueError(f"Expected a square matrix, got {matrix.shape}")

    keep = np.ones(n)
    keep[constrained_dofs] = 0.0
    keep_matrix = scipy.sparse.diags(keep)
    constrained_matrix = scipy.sparse.diags(1.0 - keep)

    result = (keep_matrix @ matrix @ keep_matrix + constrained_matrix).tocsr()
    result.eliminate_zeros()

    if rhs is not None:
        rhs = np.array(rhs, dtype=float)
        rhs[constrained_dofs] = 0.0
    return result, rhs

