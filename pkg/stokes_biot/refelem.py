from __future__ import annotations

import functools
from typing import Literal, NamedTuple, Optional, Union

import modepy
import numpy as np

from .mesh import CellGeometry

Family = Union[
    Literal["P1"], Literal["P2"], Literal["P3"], Literal["RT0"], Literal["DG0"],
]

DOFS_PER_CELL = {"P1": 3, "P2": 6, "P3": 10, "RT0": 3, "DG0": 1}

_REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_BARYCENTRIC_GRADIENTS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

# Local edge k joins local vertices (k + 1) % 3 and (k + 2) % 3.
EDGE_VERTICES = ((1, 2), (2, 0), (0, 1))


class BasisValues(NamedTuple):
    """Basis functions tabulated at a set of points.

    Without a cell axis (reference tabulation) shapes are (points, dofs, ...),
    after :func:`push_forward` they are (cells, points, dofs, ...).

    .. py:attribute:: values

        Scalar families: (..., dofs). Vector families: (..., dofs, 2).

    .. py:attribute:: gradients

        Scalar families: (..., dofs, 2). Vector families: (..., dofs, 2, 2)
        where [..., i, j] is the derivative of component i along x_j.

    .. py:attribute:: divergence

        Vector families only, (..., dofs). None for scalar families.
    """

    values: np.ndarray
    gradients: np.ndarray
    divergence: Optional[np.ndarray]


class QuadratureRule(NamedTuple):
    points: np.ndarray
    weights: np.ndarray
    degree: int


def is_vector_family(family: Family) -> bool:
    return family == "RT0"


def _check_family(family: str) -> None:
    if family not in DOFS_PER_CELL:
        raise ValueError(f"Invalid element family {family}")


def _as_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"Expected reference points of shape (n, 2), got {points.shape}")

    tolerance = 1e-12
    x, y = points[:, 0], points[:, 1]
    outside = (x < -tolerance) | (y < -tolerance) | (x + y > 1 + tolerance)
    if np.any(outside):
        raise ValueError(
            f"Point {points[np.argmax(outside)]} is outside the reference triangle"
        )
    return points


def _barycentric(points: np.ndarray) -> np.ndarray:
    return np.stack(
        [1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]], axis=1
    )


def reference_nodes(family: Family) -> np.ndarray:
    """The nodal points of a Lagrange family in local DOF order."""
    _check_family(family)
    if family == "DG0":
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    if family == "RT0":
        raise ValueError("RT0 degrees of freedom are edge moments, not nodes")

    nodes = [vertex for vertex in _REFERENCE_VERTICES]
    if family == "P2":
        for a, b in EDGE_VERTICES:
            nodes.append(0.5 * (_REFERENCE_VERTICES[a] + _REFERENCE_VERTICES[b]))
    elif family == "P3":
        for a, b in EDGE_VERTICES:
            va, vb = _REFERENCE_VERTICES[a], _REFERENCE_VERTICES[b]
            nodes.append((2.0 * va + vb) / 3.0)
            nodes.append((va + 2.0 * vb) / 3.0)
        nodes.append(np.array([1.0 / 3.0, 1.0 / 3.0]))
    return np.array(nodes)


def _lagrange(family: Family, lam: np.ndarray) -> BasisValues:
    num_points = lam.shape[0]
    grad_lam = _BARYCENTRIC_GRADIENTS

    if family == "DG0":
        return BasisValues(
            np.ones((num_points, 1)), np.zeros((num_points, 1, 2)), None
        )

    values = []
    gradients = []

    if family == "P1":
        for i in range(3):
            values.append(lam[:, i])
            gradients.append(np.broadcast_to(grad_lam[i], (num_points, 2)))

    elif family == "P2":
        for i in range(3):
            values.append(lam[:, i] * (2 * lam[:, i] - 1))
            gradients.append((4 * lam[:, i] - 1)[:, None] * grad_lam[i])
        for a, b in EDGE_VERTICES:
            values.append(4 * lam[:, a] * lam[:, b])
            gradients.append(
                4 * (lam[:, b][:, None] * grad_lam[a] + lam[:, a][:, None] * grad_lam[b])
            )

    elif family == "P3":
        for i in range(3):
            li = lam[:, i]
            values.append(0.5 * li * (3 * li - 1) * (3 * li - 2))
            gradients.append(0.5 * (27 * li ** 2 - 18 * li + 2)[:, None] * grad_lam[i])
        for a, b in EDGE_VERTICES:
            for near, far in ((a, b), (b, a)):
                ln, lf = lam[:, near], lam[:, far]
                values.append(4.5 * ln * lf * (3 * ln - 1))
                gradients.append(
                    4.5
                    * (
                        (6 * ln * lf - lf)[:, None] * grad_lam[near]
                        + (3 * ln ** 2 - ln)[:, None] * grad_lam[far]
                    )
                )
        values.append(27 * lam[:, 0] * lam[:, 1] * lam[:, 2])
        gradients.append(
            27
            * (
                (lam[:, 1] * lam[:, 2])[:, None] * grad_lam[0]
                + (lam[:, 0] * lam[:, 2])[:, None] * grad_lam[1]
                + (lam[:, 0] * lam[:, 1])[:, None] * grad_lam[2]
            )
        )

    return BasisValues(np.stack(values, axis=1), np.stack(gradients, axis=1), None)


def _raviart_thomas(points: np.ndarray) -> BasisValues:
    # phi_k = x - p_k carries unit flux through edge k and none through the others.
    num_points = points.shape[0]
    values = points[:, None, :] - _REFERENCE_VERTICES[None, :, :]
    gradients = np.broadcast_to(np.eye(2), (num_points, 3, 2, 2)).copy()
    divergence = np.full((num_points, 3), 2.0)
    return BasisValues(values, gradients, divergence)


def eval_basis(family: Family, points: np.ndarray) -> BasisValues:
    """Evaluate a reference basis.

    Args:
        family (str): One of P1, P2, P3, RT0, DG0.
        points (np.ndarray): Reference points, shape (n, 2) or a single (2,) point.

    Returns:
        A :class:`BasisValues` without a cell axis.
    """
    _check_family(family)
    points = _as_points(points)
    if family == "RT0":
        return _raviart_thomas(points)
    return _lagrange(family, _barycentric(points))


def push_forward(
    family: Family,
    geometry: CellGeometry,
    reference: BasisValues,
    signs: Optional[np.ndarray] = None,
) -> BasisValues:
    """
    Map reference tabulations to every cell.

    Lagrange values are unchanged and gradients are composed with the inverse
    Jacobian. RT0 uses the contravariant Piola map (1/detJ) J v_hat and is
    multiplied by the per-cell orientation signs of shape (cells, dofs).
    """
    _check_family(family)
    det = geometry.det
    if np.any(np.abs(det) < 1e-300):
        raise ValueError("Singular cell Jacobian")

    num_cells = len(det)
    inverse = geometry.inverse

    if family != "RT0":
        values = np.broadcast_to(
            reference.values[None], (num_cells,) + reference.values.shape
        )
        gradients = np.einsum("qik,ckj->cqij", reference.gradients, inverse)
        return BasisValues(values, gradients, None)

    if signs is None:
        raise ValueError("RT0 push forward needs cell orientation signs")
    signs = np.asarray(signs, dtype=float)
    scale = signs / det[:, None]

    values = np.einsum("cjk,qik->cqij", geometry.jacobian, reference.values)
    values = values * scale[:, None, :, None]

    gradients = np.einsum(
        "cjk,qikl,clm->cqijm", geometry.jacobian, reference.gradients, inverse
    )
    gradients = gradients * scale[:, None, :, None, None]

    divergence = reference.divergence[None, :, :] * scale[:, None, :]
    return BasisValues(values, gradients, divergence)


@functools.lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """A symmetric Xiao-Gimbutas rule on the reference triangle.

    Args:
        degree (int): Total polynomial degree to integrate exactly, 1 to 10.

    Returns:
        A :class:`QuadratureRule` with weights summing to 1/2.
    """
    if int(degree) != degree or not 1 <= degree <= 10:
        raise ValueError(f"Unsupported quadrature degree {degree}")

    rule = modepy.XiaoGimbutasSimplexQuadrature(int(degree), 2)
    # modepy integrates over the biunit triangle (-1, -1), (1, -1), (-1, 1).
    points = 0.5 * (np.asarray(rule.nodes).T + 1.0)
    weights = np.asarray(rule.weights, dtype=float)
    weights = 0.5 * weights / weights.sum()

    assert np.all(weights > 0), f"Negative weight in quadrature of degree {degree}"
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points, weights, int(degree))


@functools.lru_cache(maxsize=None)
def edge_quadrature(num_points: int) -> QuadratureRule:
    """Gauss-Legendre points and weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(num_points)
    points = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points, weights, 2 * num_points - 1)
