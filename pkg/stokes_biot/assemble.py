from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse

from . import refelem
from .mesh import Mesh
from .problem import BiotProblem, ProblemParams
from .space import (
    AnalyticField,
    ExactField,
    Field,
    FunctionSpace,
    apply_essential_bcs,
    build_space,
    cell_chunks,
)

FormKind = Union[
    Literal["a"],
    Literal["b_uq"],
    Literal["b_wq"],
    Literal["c"],
    Literal["d"],
    Literal["mass"],
    Literal["h1"],
    Literal["divdiv"],
]

Pairing = Union[Literal["p2-rt0-dg0"], Literal["p2-p1-dg0"]]

PAIRINGS: Dict[str, Tuple[str, str, str]] = {
    "p2-rt0-dg0": ("P2v", "RT0", "DG0"),
    "p2-p1-dg0": ("P2v", "P1v", "DG0"),
}

FluxBoundary = Union[Literal["normal"], Literal["clamped"]]

FLUX_BOUNDARIES = ("normal", "clamped")

FORM_DEGREE = 4
LOAD_DEGREE = 8


def check_pairing(pairing: str) -> None:
    if pairing not in PAIRINGS:
        raise ValueError(
            f"Invalid pairing {pairing}, expected one of {sorted(PAIRINGS)}"
        )


def flux_space_boundary(flux_kind: str, flux_boundary: FluxBoundary) -> str:
    """
    The essential condition of a flux space. RT0 carries only normal fluxes,
    so clamping it is the same as z.n = 0.
    """
    if flux_boundary not in FLUX_BOUNDARIES:
        raise ValueError(
            f"Invalid flux boundary {flux_boundary}, "
            f"expected one of {list(FLUX_BOUNDARIES)}"
        )
    if flux_boundary == "clamped" and flux_kind != "RT0":
        return "dirichlet"
    return "normal"


###########################################
# Bilinear forms
###########################################


def _check_ranks(kind: str, trial: FunctionSpace, test: FunctionSpace) -> None:
    vector_vector = trial.value_rank == 1 and test.value_rank == 1
    vector_scalar = trial.value_rank == 1 and test.value_rank == 0
    scalar_scalar = trial.value_rank == 0 and test.value_rank == 0

    if kind == "a":
        ok = vector_vector and trial.is_lagrange and test.is_lagrange
    elif kind in ("b_uq", "b_wq"):
        ok = vector_scalar
    elif kind in ("c", "divdiv"):
        ok = vector_vector
    elif kind == "d":
        ok = scalar_scalar
    elif kind == "mass":
        ok = vector_vector or scalar_scalar
    elif kind == "h1":
        ok = (vector_vector or scalar_scalar) and trial.is_lagrange and test.is_lagrange
    else:
        raise ValueError(f"Invalid form kind {kind}")

    if not ok:
        raise ValueError(
            f"Form {kind} does not accept trial {trial.kind} and test {test.kind}"
        )


def _strain(gradients: np.ndarray) -> np.ndarray:
    return 0.5 * (gradients + np.swapaxes(gradients, -1, -2))


def _local_matrices(
    kind: str,
    trial: refelem.BasisValues,
    test: refelem.BasisValues,
    dx: np.ndarray,
    params: ProblemParams,
) -> np.ndarray:
    if kind == "a":
        eps_trial = _strain(trial.gradients)
        eps_test = _strain(test.gradients)
        return params.shear_factor * params.mu * np.einsum(
            "cq,cqiab,cqjab->cij", dx, eps_test, eps_trial
        ) + params.lmbda * np.einsum(
            "cq,cqi,cqj->cij", dx, test.divergence, trial.divergence
        )

    if kind in ("b_uq", "b_wq"):
        return np.einsum("cq,cqi,cqj->cij", dx, test.values, trial.divergence)

    if kind == "divdiv":
        return np.einsum("cq,cqi,cqj->cij", dx, test.divergence, trial.divergence)

    if kind in ("c", "d", "mass", "h1"):
        if trial.values.ndim == 4:
            mass = np.einsum("cq,cqia,cqja->cij", dx, test.values, trial.values)
        else:
            mass = np.einsum("cq,cqi,cqj->cij", dx, test.values, trial.values)

        if kind == "c":
            return mass / params.kappa
        if kind == "d":
            return params.c0 * mass
        if kind == "h1":
            if trial.gradients.ndim == 5:
                stiffness = np.einsum(
                    "cq,cqiab,cqjab->cij", dx, test.gradients, trial.gradients
                )
            else:
                stiffness = np.einsum(
                    "cq,cqia,cqja->cij", dx, test.gradients, trial.gradients
                )
            return mass + stiffness
        return mass

    raise ValueError(f"Invalid form kind {kind}")


def assemble_form(
    kind: FormKind,
    trial: FunctionSpace,
    test: FunctionSpace,
    params: Optional[ProblemParams] = None,
    degree: int = FORM_DEGREE,
) -> scipy.sparse.csr_matrix:
    """Assemble a bilinear form as a (test dofs) x (trial dofs) matrix.

    Args:
        kind (str): a, b_uq, b_wq, c, d, mass, h1 or divdiv.
        trial (:class:`FunctionSpace`): The trial space (columns).
        test (:class:`FunctionSpace`): The test space (rows).
        params (:class:`ProblemParams`): Material parameters for a, c and d.
        degree (int): Quadrature degree.

    Returns:
        A finalized CSR matrix without stored zeros.
    """
    if trial.mesh is not test.mesh:
        raise ValueError("Trial and test spaces live on different meshes")
    if params is None:
        params = ProblemParams()
    if kind == "c" and not params.kappa > 0:
        raise ValueError(f"Form c needs kappa > 0, got {params.kappa}")
    _check_ranks(kind, trial, test)

    mesh = trial.mesh
    rule = refelem.quadrature(degree)
    det = mesh.cell_geometry().det

    data = []
    for cells in cell_chunks(mesh):
        trial_basis = trial.tabulate(rule.points, cells)
        test_basis = (
            trial_basis if test is trial else test.tabulate(rule.points, cells)
        )
        dx = rule.weights[None, :] * np.abs(det[cells])[:, None]
        data.append(_local_matrices(kind, trial_basis, test_basis, dx, params))
    local = np.concatenate(data)

    rows = np.broadcast_to(test.cell_dofs[:, :, None], local.shape)
    columns = np.broadcast_to(trial.cell_dofs[:, None, :], local.shape)
    matrix = scipy.sparse.coo_matrix(
        (local.reshape(-1), (rows.reshape(-1), columns.reshape(-1))),
        shape=(test.dof_count, trial.dof_count),
    ).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return matrix


def assemble_functional(
    source: Union[ExactField, Field],
    test: FunctionSpace,
    degree: int = LOAD_DEGREE,
) -> np.ndarray:
    """Assemble the vector of (source, v) over the basis of a test space."""
    mesh = test.mesh
    if not isinstance(source, Field):
        source = AnalyticField(mesh, source, value_rank=test.value_rank)
    if source.value_rank != test.value_rank:
        raise ValueError(
            f"Source of rank {source.value_rank} cannot be tested with {test.kind}"
        )

    rule = refelem.quadrature(degree)
    det = mesh.cell_geometry().det

    load = np.zeros(test.dof_count)
    for cells in cell_chunks(mesh):
        basis = test.tabulate(rule.points, cells)
        values = source.values(rule.points, cells)
        dx = rule.weights[None, :] * np.abs(det[cells])[:, None]
        if test.value_rank == 1:
            local = np.einsum("cq,cqa,cqia->ci", dx, values, basis.values)
        else:
            local = np.einsum("cq,cq,cqi->ci", dx, values, basis.values)
        load += np.bincount(
            test.cell_dofs[cells].reshape(-1),
            weights=local.reshape(-1),
            minlength=test.dof_count,
        )
    return load


def _symmetrize(matrix: scipy.sparse.spmatrix) -> scipy.sparse.csr_matrix:
    return (0.5 * (matrix + matrix.T)).tocsr()


def export_coo(matrix: scipy.sparse.spmatrix, path: str) -> None:
    """Write a matrix as (i, j, value) lines."""
    coo = matrix.tocoo()
    frame = pd.DataFrame({"i": coo.row, "j": coo.col, "value": coo.data})
    frame.to_csv(path, sep=" ", index=False, header=False, float_format="%.17g")


###########################################
# The Biot step system
###########################################


@dataclass
class BiotSystem:
    """
        The symmetric block system of one implicit Euler step

            [ A     0        B_u^T      0 ]
            [ 0     tau C    tau B_z^T  0 ]
            [ B_u   tau B_z  -D         m ]
            [ 0     0        m^T        0 ]

        acting on (u, z, p, multiplier), with right-hand side
        ((f, v), tau (g, w), tau (s, q) + b(u_old, q) - d(p_old, q), 0).
        The mean-value row m holds the cell areas. Essential boundary
        conditions are already eliminated from `matrix`.
    """

    pairing: str
    mesh: Mesh
    params: ProblemParams
    displacement_space: FunctionSpace
    flux_space: FunctionSpace
    pressure_space: FunctionSpace
    A: scipy.sparse.csr_matrix
    B_u: scipy.sparse.csr_matrix
    B_z: scipy.sparse.csr_matrix
    C: scipy.sparse.csr_matrix
    D: scipy.sparse.csr_matrix
    m: np.ndarray
    use_mean_constraint: bool
    matrix: scipy.sparse.csr_matrix
    constrained_dofs: np.ndarray
    _factorization: Optional[object] = field(default=None, repr=False)

    @property
    def block_sizes(self) -> Tuple[int, int, int, int]:
        return (
            self.displacement_space.dof_count,
            self.flux_space.dof_count,
            self.pressure_space.dof_count,
            1 if self.use_mean_constraint else 0,
        )

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)])

    @property
    def dimension(self) -> int:
        return int(sum(self.block_sizes))

    @property
    def free_count(self) -> int:
        return self.dimension - len(self.constrained_dofs)

    def split(
        self, solution: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        offsets = self.offsets
        u = solution[offsets[0] : offsets[1]]
        z = solution[offsets[1] : offsets[2]]
        p = solution[offsets[2] : offsets[3]]
        multiplier = float(solution[offsets[3]]) if self.use_mean_constraint else 0.0
        return u, z, p, multiplier

    def factorization(self):
        """The factorization of `matrix`, computed once and reused by every step."""
        if self._factorization is None:
            from .linsolve import factorize

            self._factorization = factorize(self.matrix)
        return self._factorization


def assemble_biot_step(
    pairing: Pairing,
    mesh: Mesh,
    params: ProblemParams,
    use_mean_constraint: bool = True,
    flux_boundary: FluxBoundary = "normal",
) -> BiotSystem:
    """Assemble the block operator of one implicit Euler step.

    Args:
        pairing (str): p2-rt0-dg0 or p2-p1-dg0.
        mesh (:class:`Mesh`): The mesh.
        params (:class:`ProblemParams`): Material and time step parameters.
        use_mean_constraint (bool): Append the mean-zero pressure multiplier.
        flux_boundary (str): normal imposes z.n = 0 on the boundary, clamped
            imposes z = 0 (the same for RT0).

    Returns:
        The :class:`BiotSystem`.
    """
    check_pairing(pairing)
    if not params.kappa > 0:
        raise ValueError(f"kappa must be positive, got {params.kappa}")
    if not params.tau > 0:
        raise ValueError(f"tau must be positive, got {params.tau}")

    start = time.time()
    u_kind, z_kind, p_kind = PAIRINGS[pairing]
    U = build_space(u_kind, mesh)
    W = build_space(z_kind, mesh, flux_space_boundary(z_kind, flux_boundary))
    Q = build_space(p_kind, mesh)
    tau = params.tau

    A = _symmetrize(assemble_form("a", U, U, params))
    B_u = assemble_form("b_uq", U, Q, params)
    B_z = assemble_form("b_wq", W, Q, params)
    C = _symmetrize(assemble_form("c", W, W, params))
    D = _symmetrize(assemble_form("d", Q, Q, params))
    m = mesh.cell_areas()

    if use_mean_constraint:
        m_column = scipy.sparse.csr_matrix(m[:, None])
        blocks = [
            [A, None, B_u.T, None],
            [None, tau * C, tau * B_z.T, None],
            [B_u, tau * B_z, -D, m_column],
            [None, None, m_column.T, None],
        ]
    else:
        blocks = [
            [A, None, B_u.T],
            [None, tau * C, tau * B_z.T],
            [B_u, tau * B_z, -D],
        ]
    composed = scipy.sparse.bmat(blocks, format="csr")

    constrained = np.concatenate(
        [U.constrained_dofs, U.dof_count + W.constrained_dofs]
    )
    matrix, _ = apply_essential_bcs(composed, None, constrained)

    logging.info(
        "Assembled %s step system on n_div=%d with %s flux boundary: "
        "dimension %d, %d constrained, %d nonzeros in %.2fs",
        pairing,
        mesh.n_div,
        flux_boundary,
        matrix.shape[0],
        len(constrained),
        matrix.nnz,
        time.time() - start,
    )

    return BiotSystem(
        pairing=pairing,
        mesh=mesh,
        params=params,
        displacement_space=U,
        flux_space=W,
        pressure_space=Q,
        A=A,
        B_u=B_u,
        B_z=B_z,
        C=C,
        D=D,
        m=m,
        use_mean_constraint=use_mean_constraint,
        matrix=matrix,
        constrained_dofs=constrained,
    )


def assemble_load(
    system: BiotSystem,
    problem: BiotProblem,
    t: float,
    previous: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> np.ndarray:
    """
    Assemble the right-hand side of the step ending at time t.

    Args:
        system (:class:`BiotSystem`): The assembled step system.
        problem (:class:`BiotProblem`): Supplies f, g and s.
        t (float): The time level of the loads.
        previous (tuple): Coefficients (u, p) of the previous step, zero if None.

    Returns:
        The block right-hand side with constrained entries zeroed.
    """
    tau = system.params.tau
    U, W, Q = system.displacement_space, system.flux_space, system.pressure_space

    if previous is None:
        previous = (np.zeros(U.dof_count), np.zeros(Q.dof_count))
    u_old, p_old = previous

    displacement_load = assemble_functional(
        functools.partial(problem.body_force, t), U
    )
    flux_load = tau * assemble_functional(
        functools.partial(problem.flux_source, t), W
    )
    pressure_load = (
        tau * assemble_functional(functools.partial(problem.fluid_source, t), Q)
        + system.B_u @ u_old
        - system.D @ p_old
    )

    parts = [displacement_load, flux_load, pressure_load]
    if system.use_mean_constraint:
        parts.append(np.zeros(1))
    rhs = np.concatenate(parts)
    rhs[system.constrained_dofs] = 0.0
    return rhs
