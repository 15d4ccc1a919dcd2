import math

import pytest
import numpy as np

from stokes_biot import refelem

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def _monomial_integral(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_quadrature_weights():
    for degree in range(1, 11):
        rule = refelem.quadrature(degree)
        assert abs(rule.weights.sum() - 0.5) < 1e-14
        assert np.all(rule.weights > 0)
        x, y = rule.points[:, 0], rule.points[:, 1]
        assert np.all(x >= -1e-14) and np.all(y >= -1e-14)
        assert np.all(x + y <= 1 + 1e-14)


def test_quadrature_exactness():
    for degree in (2, 4, 8):
        rule = refelem.quadrature(degree)
        x, y = rule.points[:, 0], rule.points[:, 1]
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                approx = np.sum(rule.weights * x ** a * y ** b)
                assert abs(approx - _monomial_integral(a, b)) < 1e-13


def test_invalid_quadrature():
    with pytest.raises(ValueError):
        refelem.quadrature(0)
    with pytest.raises(ValueError):
        refelem.quadrature(11)


def test_edge_quadrature():
    rule = refelem.edge_quadrature(2)
    assert abs(rule.weights.sum() - 1.0) < 1e-15
    assert abs(np.sum(rule.weights * rule.points ** 3) - 0.25) < 1e-15


def test_partition_of_unity():
    points = reference_points(20)
    for family in ("P1", "P2", "P3"):
        basis = refelem.eval_basis(family, points)
        assert basis.values.shape == (20, refelem.DOFS_PER_CELL[family])
        assert np.allclose(basis.values.sum(axis=1), 1.0)
        assert np.allclose(basis.gradients.sum(axis=1), 0.0)


def test_nodal_basis():
    for family in ("P1", "P2", "P3"):
        nodes = refelem.reference_nodes(family)
        basis = refelem.eval_basis(family, nodes)
        assert np.allclose(basis.values, np.eye(len(nodes)), atol=1e-13)


def test_gradients_match_differences():
    points = reference_points(10, seed=3) * 0.9 + 0.02
    step = 1e-6
    for family in ("P2", "P3"):
        basis = refelem.eval_basis(family, points)
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = step
            plus = refelem.eval_basis(family, points + shift).values
            minus = refelem.eval_basis(family, points - shift).values
            assert np.allclose(
                (plus - minus) / (2 * step), basis.gradients[..., axis], atol=1e-6
            )


def test_raviart_thomas_edge_fluxes():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    rule = refelem.edge_quadrature(2)
    for k, (a, b) in enumerate(refelem.EDGE_VERTICES):
        tangent = vertices[b] - vertices[a]
        # Outward normal for a counterclockwise triangle, scaled by edge length.
        normal = np.array([tangent[1], -tangent[0]])
        points = vertices[a] + rule.points[:, None] * tangent
        values = refelem.eval_basis("RT0", points).values
        fluxes = np.einsum("q,qdi,i->d", rule.weights, values, normal)
        expected = np.zeros(3)
        expected[k] = 1.0
        assert np.allclose(fluxes, expected)


def test_raviart_thomas_divergence():
    basis = refelem.eval_basis("RT0", reference_points(5))
    assert np.all(basis.divergence == 2.0)
    assert basis.values.shape == (5, 3, 2)


def test_points_outside_raise():
    with pytest.raises(ValueError):
        refelem.eval_basis("P1", np.array([[0.8, 0.8]]))
    with pytest.raises(ValueError):
        refelem.eval_basis("P2", np.array([[-0.1, 0.2]]))


def test_invalid_family():
    with pytest.raises(ValueError):
        refelem.eval_basis("P4", np.array([[0.1, 0.1]]))
    with pytest.raises(ValueError):
        refelem.reference_nodes("RT0")


def test_push_forward_needs_signs(mesh2):
    reference = refelem.eval_basis("RT0", reference_points(3))
    with pytest.raises(ValueError):
        refelem.push_forward("RT0", mesh2.cell_geometry(), reference)
