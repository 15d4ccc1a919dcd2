import pytest
import numpy as np
import scipy.sparse

from stokes_biot.assemble import assemble_biot_step
from stokes_biot.linsolve import (
    EigenSolverError,
    Factorization,
    SolverError,
    equilibration,
    factor_solve,
    inertia,
    largest_generalized_eigenvalue,
    relative_residual,
    smallest_generalized_eigenpairs,
)
from stokes_biot.problem import ProblemParams

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def _laplacian(n):
    return scipy.sparse.diags(
        [-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]
    ).tocsr()


def test_small_saddle_point_solve():
    matrix = scipy.sparse.csr_matrix(
        np.array([[2.0, 0.0, 1.0], [0.0, 3.0, 1.0], [1.0, 1.0, 0.0]])
    )
    x = factor_solve(matrix, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(matrix @ x, [1.0, 2.0, 3.0])


def test_multiple_right_hand_sides():
    matrix = _laplacian(10)
    rhs = np.eye(10)[:, :3]
    x = Factorization(matrix).solve(rhs)
    assert np.allclose(matrix @ x, rhs)


def test_singular_matrix():
    with pytest.raises(SolverError):
        factor_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 0.0]))


def test_length_mismatch():
    with pytest.raises(ValueError):
        Factorization(_laplacian(4)).solve(np.ones(5))
    with pytest.raises(ValueError):
        Factorization(scipy.sparse.csr_matrix(np.ones((2, 3))))


def test_equilibration():
    matrix = scipy.sparse.csr_matrix(
        np.array([[4.0, 0.0, 0.0], [0.0, 0.0, -9.0], [0.0, -9.0, 0.0]])
    )
    assert np.allclose(equilibration(matrix), [0.5, 1.0 / 3.0, 1.0 / 3.0])
    empty = scipy.sparse.csr_matrix((2, 2))
    assert np.all(equilibration(empty) == 1.0)


def test_relative_residual():
    matrix = np.eye(2)
    assert relative_residual(matrix, np.zeros(2), np.zeros(2)) == 0.0
    assert relative_residual(matrix, np.ones(2), np.ones(2)) == 0.0
    assert relative_residual(matrix, np.zeros(2), np.ones(2)) == 1.0


def test_transpose_gives_identical_solution(mesh2, params):
    system = assemble_biot_step("p2-rt0-dg0", mesh2, params)
    rhs = np.linspace(-1.0, 1.0, system.dimension)
    rhs[system.constrained_dofs] = 0.0
    x = Factorization(system.matrix).solve(rhs)
    y = Factorization(system.matrix.T.tocsr()).solve(rhs)
    assert np.allclose(x, y, rtol=0, atol=1e-10 * np.abs(x).max())


def test_tiny_conductivity_solve(mesh4):
    params = ProblemParams(kappa=1e-12)
    system = assemble_biot_step("p2-rt0-dg0", mesh4, params)
    rhs = np.ones(system.dimension)
    rhs[system.constrained_dofs] = 0.0
    x = system.factorization().solve(rhs)
    assert relative_residual(system.matrix, x, rhs) <= 1e-9


def test_inertia():
    assert inertia(np.diag([3.0, -1.0, 2.0])) == (2, 1, 0)
    assert inertia(np.array([[0.0, 1.0], [1.0, 0.0]])) == (1, 1, 0)
    assert inertia(np.diag([1.0, 0.0])) == (1, 0, 1)


def test_dense_eigenpairs():
    A = np.diag([4.0, 1.0, 9.0])
    M = np.diag([1.0, 1.0, 3.0])
    pairs = smallest_generalized_eigenpairs(A, M, k=2)
    assert np.allclose(pairs.values, [1.0, 3.0])
    assert abs(abs(pairs.vectors[1, 0]) - 1.0) < 1e-12


def test_deflated_eigenpairs():
    n = 12
    # Neumann Laplacian, constants in the kernel.
    A = _laplacian(n).toarray()
    A[0, 0] = A[-1, -1] = 1.0
    pairs = smallest_generalized_eigenpairs(
        A, np.eye(n), k=1, deflation=np.ones(n)
    )
    assert abs(pairs.values[0] - (2 - 2 * np.cos(np.pi / n))) < 1e-12
    assert abs(pairs.vectors[:, 0].sum()) < 1e-10


def test_shift_invert_matches_dense():
    n = 40
    A = _laplacian(n)
    M = scipy.sparse.identity(n, format="csr")
    expected = 2 - 2 * np.cos(np.arange(1, 4) * np.pi / (n + 1))
    sparse = smallest_generalized_eigenpairs(A, M, k=3, dense_limit=0)
    dense = smallest_generalized_eigenpairs(A, M, k=3)
    assert np.allclose(sparse.values, expected, rtol=1e-8)
    assert np.allclose(dense.values, expected, rtol=1e-10)


def test_eigen_argument_errors():
    with pytest.raises(ValueError):
        smallest_generalized_eigenpairs(np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        smallest_generalized_eigenpairs(
            np.eye(3), np.eye(3), k=3, deflation=np.ones(3)
        )


def test_eigen_solver_error_keeps_residual():
    error = EigenSolverError("failed", best_residual=1e-3)
    assert error.best_residual == 1e-3


def test_largest_eigenvalue():
    value = largest_generalized_eigenvalue(np.diag([1.0, 5.0]), np.diag([1.0, 2.0]))
    assert abs(value - 2.5) < 1e-12
