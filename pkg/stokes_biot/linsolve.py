from __future__ import annotations

import logging
import time
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

Matrix = Union[np.ndarray, scipy.sparse.spmatrix]

DENSE_LIMIT = 2000
RESIDUAL_TOLERANCE = 1e-9
EIGEN_TOLERANCE = 1e-8
PIVOT_THRESHOLD = 0.01
ORDERING = "COLAMD"


class SolverError(RuntimeError):
    """A factorization or solve that broke down."""

    def __init__(
        self,
        message: str,
        index: Optional[int] = None,
        residual: Optional[float] = None,
    ):
        super().__init__(message)
        self.index = index
        self.residual = residual


class EigenSolverError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class Inertia(NamedTuple):
    positive: int
    negative: int
    zero: int


class Eigenpairs(NamedTuple):
    """Generalized eigenpairs in ascending order.

    .. py:attribute:: values

        (k,) eigenvalues

    .. py:attribute:: vectors

        (n, k) M-orthonormal eigenvectors
    """

    values: np.ndarray
    vectors: np.ndarray


def _to_dense(matrix: Matrix) -> np.ndarray:
    if scipy.sparse.issparse(matrix):
        return matrix.toarray()
    return np.asarray(matrix, dtype=float)


def _check_square(matrix: Matrix) -> int:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {matrix.shape}")
    return matrix.shape[0]


def equilibration(matrix: scipy.sparse.spmatrix) -> np.ndarray:
    """
    Symmetric scaling 1 / sqrt(max_j |K_ij|), with 1 for empty rows.

    Zero diagonals of saddle point blocks and tiny storage terms are scaled
    by their coupling entries instead of their diagonal.
    """
    row_max = np.asarray(abs(matrix).max(axis=1).todense()).reshape(-1)
    scale = np.ones_like(row_max, dtype=float)
    nonzero = row_max > 0
    scale[nonzero] = 1.0 / np.sqrt(row_max[nonzero])
    return scale


def relative_residual(matrix: Matrix, x: np.ndarray, b: np.ndarray) -> float:
    """||K x - b|| / (||K|| ||x|| + ||b||) in the infinity norm."""
    residual = matrix @ x - b
    if scipy.sparse.issparse(matrix):
        matrix_norm = abs(matrix).sum(axis=1).max()
    else:
        matrix_norm = np.abs(matrix).sum(axis=1).max()
    denominator = matrix_norm * np.abs(x).max() + np.abs(b).max()
    if denominator == 0:
        return 0.0
    return float(np.abs(residual).max() / denominator)


class Factorization:
    """
        A sparse LU factorization of an equilibrated symmetric matrix.

        The matrix is scaled to S K S, factored by SuperLU with a COLAMD
        column ordering and threshold pivoting that keeps the diagonal pivot
        while it is at least 0.01 of the column maximum, and the scaling is
        undone in every solve. A finalized factorization only reads its
        state, so concurrent solves are safe.
    """

    def __init__(self, matrix: scipy.sparse.spmatrix):
        n = _check_square(matrix)
        start = time.time()

        self.matrix = scipy.sparse.csr_matrix(matrix)
        self.n = n
        self.scale = equilibration(self.matrix)
        scaling = scipy.sparse.diags(self.scale)
        self.scaled = (scaling @ self.matrix @ scaling).tocsc()

        try:
            self.lu = scipy.sparse.linalg.splu(
                self.scaled,
                permc_spec=ORDERING,
                diag_pivot_thresh=PIVOT_THRESHOLD,
            )
        except RuntimeError as error:
            raise SolverError(
                f"Factorization of a {n} x {n} matrix broke down: {error}",
                index=self._locate_breakdown(),
            ) from error

        pivots = np.abs(self.lu.U.diagonal())
        smallest = int(np.argmin(pivots))
        if pivots[smallest] <= 1e-14 * pivots.max():
            column = int(np.flatnonzero(self.lu.perm_c == smallest)[0])
            raise SolverError(
                f"Zero pivot {pivots[smallest]:.3e} at unknown {column}",
                index=column,
            )

        logging.info(
            "Factored %d x %d matrix with %d nonzeros (fill %d) in %.2fs",
            n,
            n,
            self.matrix.nnz,
            self.lu.L.nnz + self.lu.U.nnz,
            time.time() - start,
        )

    def _locate_breakdown(self) -> Optional[int]:
        if self.n > DENSE_LIMIT:
            return None
        _, d, perm = scipy.linalg.ldl(self.scaled.toarray(), lower=True)
        diagonal = np.abs(np.diag(d))
        tiny = np.flatnonzero(diagonal <= 1e-14 * max(diagonal.max(), 1e-300))
        if len(tiny) == 0:
            return None
        return int(perm[tiny[0]])

    def _apply(self, rhs: np.ndarray) -> np.ndarray:
        scale = self.scale if rhs.ndim == 1 else self.scale[:, None]
        return scale * self.lu.solve(scale * rhs)

    def solve(self, rhs: np.ndarray, refinement_steps: int = 2) -> np.ndarray:
        """Solve K x = rhs, with iterative refinement if the residual is large."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(
                f"Right-hand side of length {rhs.shape[0]} does not match "
                f"matrix of size {self.n}"
            )

        x = self._apply(rhs)
        residual = self._residual(x, rhs)
        for _ in range(refinement_steps):
            if residual <= RESIDUAL_TOLERANCE * 1e-3:
                break
            x = x + self._apply(rhs - self.matrix @ x)
            residual = self._residual(x, rhs)

        if residual > RESIDUAL_TOLERANCE:
            raise SolverError(
                f"Relative residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:.0e}",
                residual=residual,
            )
        logging.info("Solved with relative residual %.3e", residual)
        return x

    def _residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        if rhs.ndim == 1:
            return relative_residual(self.matrix, x, rhs)
        return max(
            relative_residual(self.matrix, x[:, i], rhs[:, i])
            for i in range(rhs.shape[1])
        )

    def reconstruct(self) -> scipy.sparse.csr_matrix:
        """The matrix rebuilt from the factors, permutations and scaling."""
        n = self.n
        row_permutation = scipy.sparse.csc_matrix(
            (np.ones(n), (self.lu.perm_r, np.arange(n)))
        )
        column_permutation = scipy.sparse.csc_matrix(
            (np.ones(n), (np.arange(n), self.lu.perm_c))
        )
        unscale = scipy.sparse.diags(1.0 / self.scale)
        factors = self.lu.L @ self.lu.U
        product = row_permutation.T @ factors @ column_permutation.T
        return (unscale @ product @ unscale).tocsr()

    def inertia(self) -> Inertia:
        """
        Counts of positive, negative and zero eigenvalues, from a dense
        Bunch-Kaufman LDL^T factorization of the equilibrated matrix.
        """
        if self.n > DENSE_LIMIT:
            raise ValueError(
                f"Inertia is only computed for dimension <= {DENSE_LIMIT}, "
                f"got {self.n}"
            )
        return inertia(self.scaled)


def inertia(matrix: Matrix) -> Inertia:
    dense = _to_dense(matrix)
    _check_square(dense)
    _, d, _ = scipy.linalg.ldl(dense, lower=True, hermitian=True)
    # d is block diagonal with 1x1 and 2x2 blocks.
    eigenvalues = np.linalg.eigvalsh(d)
    tolerance = 1e-12 * max(np.abs(eigenvalues).max(), 1e-300)
    return Inertia(
        positive=int(np.sum(eigenvalues > tolerance)),
        negative=int(np.sum(eigenvalues < -tolerance)),
        zero=int(np.sum(np.abs(eigenvalues) <= tolerance)),
    )


def factorize(matrix: scipy.sparse.spmatrix) -> Factorization:
    return Factorization(matrix)


def factor_solve(matrix: Matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve a sparse symmetric (possibly indefinite) system.

    Args:
        matrix: A square symmetric matrix.
        rhs (np.ndarray): A right-hand side vector, or a matrix of them.

    Returns:
        The solution. Raises :class:`SolverError` if the relative residual
        exceeds 1e-9.
    """
    if not scipy.sparse.issparse(matrix):
        matrix = scipy.sparse.csr_matrix(np.asarray(matrix, dtype=float))
    return Factorization(matrix).solve(rhs)


###########################################
# Generalized symmetric eigenproblems
###########################################


def _m_orthonormalize(vectors: np.ndarray, M: Matrix) -> np.ndarray:
    gram = vectors.T @ (M @ vectors)
    cholesky = np.linalg.cholesky(np.atleast_2d(gram))
    return vectors @ np.linalg.inv(cholesky).T


def _eigen_residuals(
    A: Matrix, M: Matrix, values: np.ndarray, vectors: np.ndarray
) -> np.ndarray:
    """||A x - lambda M x||_{M^-1}, relative to max(1, |lambda|) ||x||_M."""
    residuals = A @ vectors - (M @ vectors) * values[None, :]
    if scipy.sparse.issparse(M):
        dual = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(M)).solve(residuals)
    else:
        dual = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), residuals)
    dual_norms = np.sqrt(np.abs(np.sum(residuals * dual, axis=0)))
    m_norms = np.sqrt(np.abs(np.sum(vectors * (M @ vectors), axis=0)))
    return dual_norms / (np.maximum(1.0, np.abs(values)) * m_norms)


def smallest_generalized_eigenpairs(
    A: Matrix,
    M: Matrix,
    k: int = 1,
    deflation: Optional[np.ndarray] = None,
    dense_limit: int = DENSE_LIMIT,
) -> Eigenpairs:
    """The k smallest eigenpairs of A x = lambda M x on the M-orthogonal
    complement of a deflation subspace.

    Args:
        A: Symmetric positive (semi)definite matrix.
        M: Symmetric positive definite matrix of the same size.
        k (int): Number of eigenpairs.
        deflation (np.ndarray): (n,) or (n, r) vectors spanning the subspace
            to remove, typically constants.
        dense_limit (int): Largest dimension solved with a dense eigensolver.

    Returns:
        :class:`Eigenpairs` with ascending eigenvalues.
    """
    n = _check_square(A)
    if M.shape != A.shape:
        raise ValueError(f"Matrix shapes {A.shape} and {M.shape} differ")

    basis = None
    if deflation is not None:
        basis = _m_orthonormalize(
            np.asarray(deflation, dtype=float).reshape(n, -1), M
        )
    available = n - (0 if basis is None else basis.shape[1])
    if not 1 <= k <= available:
        raise ValueError(
            f"Cannot compute {k} eigenpairs of a {available} dimensional problem"
        )

    start = time.time()
    if n <= dense_limit:
        A_dense = _to_dense(A)
        M_dense = _to_dense(M)
        if basis is not None:
            complement = scipy.linalg.null_space((M_dense @ basis).T)
            A_reduced = complement.T @ A_dense @ complement
            M_reduced = complement.T @ M_dense @ complement
        else:
            complement = None
            A_reduced, M_reduced = A_dense, M_dense
        # Diagonal scaling of M keeps differently weighted blocks comparable.
        scale = 1.0 / np.sqrt(np.abs(np.diag(M_reduced)))
        A_reduced = scale[:, None] * A_reduced * scale[None, :]
        M_reduced = scale[:, None] * M_reduced * scale[None, :]
        A_reduced = 0.5 * (A_reduced + A_reduced.T)
        M_reduced = 0.5 * (M_reduced + M_reduced.T)
        values, vectors = scipy.linalg.eigh(
            A_reduced, M_reduced, subset_by_index=[0, k - 1]
        )
        vectors = scale[:, None] * vectors
        if complement is not None:
            vectors = complement @ vectors
    else:
        values, vectors = _shift_invert(A, M, k, basis)

    residuals = _eigen_residuals(A, M, values, vectors)
    if np.any(residuals > EIGEN_TOLERANCE):
        raise EigenSolverError(
            f"Eigenpair residual {residuals.max():.3e} exceeds {EIGEN_TOLERANCE:.0e}",
            best_residual=float(residuals.min()),
        )

    logging.info(
        "Computed %d generalized eigenpairs of size %d in %.2fs, smallest %.6e",
        k,
        n,
        time.time() - start,
        values[0],
    )
    return Eigenpairs(values, vectors)


def _shift_invert(
    A: Matrix, M: Matrix, k: int, basis: Optional[np.ndarray]
) -> Eigenpairs:
    A = scipy.sparse.csc_matrix(A)
    M = scipy.sparse.csc_matrix(M)
    n = A.shape[0]

    # A slightly negative shift keeps A - sigma M definite on semidefinite A.
    sigma = -1e-10 * abs(A).sum(axis=1).max() / abs(M).sum(axis=1).max()
    shifted = Factorization(A - sigma * M)

    def project(vectors: np.ndarray) -> np.ndarray:
        if basis is None:
            return vectors
        return vectors - basis @ (basis.T @ (M @ vectors))

    operator = scipy.sparse.linalg.LinearOperator(
        (n, n), matvec=lambda v: project(shifted._apply(np.asarray(v).reshape(-1)))
    )
    start_vector = project(np.ones(n) + np.linspace(0.0, 1.0, n))

    try:
        values, vectors = scipy.sparse.linalg.eigsh(
            A,
            k=k,
            M=M,
            sigma=sigma,
            which="LM",
            OPinv=operator,
            v0=start_vector,
            maxiter=10 * n,
        )
    except scipy.sparse.linalg.ArpackNoConvergence as error:
        raise EigenSolverError(
            f"Shift-invert Lanczos did not converge: {error}", best_residual=np.inf
        ) from error

    order = np.argsort(values)
    return Eigenpairs(values[order], vectors[:, order])


def largest_generalized_eigenvalue(A: Matrix, M: Matrix) -> float:
    """The largest eigenvalue of A x = lambda M x, for continuity constants."""
    n = _check_square(A)
    if n <= DENSE_LIMIT:
        A_dense = _to_dense(A)
        M_dense = _to_dense(M)
        values = scipy.linalg.eigh(
            0.5 * (A_dense + A_dense.T),
            0.5 * (M_dense + M_dense.T),
            eigvals_only=True,
            subset_by_index=[n - 1, n - 1],
        )
        return float(values[-1])

    values = scipy.sparse.linalg.eigsh(
        scipy.sparse.csc_matrix(A),
        k=1,
        M=scipy.sparse.csc_matrix(M),
        which="LA",
        return_eigenvectors=False,
    )
    return float(values[-1])
