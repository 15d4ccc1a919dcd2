from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, NamedTuple, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse

from . import refelem
from .assemble import (
    FORM_DEGREE,
    PAIRINGS,
    FluxBoundary,
    assemble_form,
    check_pairing,
    flux_space_boundary,
)
from .linsolve import (
    factor_solve,
    largest_generalized_eigenvalue,
    smallest_generalized_eigenpairs,
)
from .mesh import Mesh, build_unit_square
from .metrics import format_value
from .problem import ProblemParams
from .space import FunctionSpace, build_space, cell_chunks

NormPairing = Union[Literal["standard"], Literal["A"], Literal["B"], Literal["C"]]

NORM_PAIRINGS = ("standard", "A", "B")

# Largest mesh on which the composite operator is analysed.
COMPOSITE_MAX_DIV = 8


###########################################
# Containment
###########################################


def containment_residual(
    flux_space: FunctionSpace, pressure_space: FunctionSpace
) -> float:
    """
    The largest relative distance ||div w - P div w|| / ||div w|| over the
    basis functions w of a flux space, where P is the L2 projection onto the
    piecewise constant pressure space. Zero certifies div W_h in Q_h.
    """
    if flux_space.mesh is not pressure_space.mesh:
        raise ValueError("Flux and pressure spaces live on different meshes")
    if pressure_space.kind != "DG0":
        raise ValueError(
            f"Containment is checked against DG0, got {pressure_space.kind}"
        )
    if flux_space.value_rank != 1:
        raise ValueError(f"{flux_space.kind} is not a vector space")

    mesh = flux_space.mesh
    rule = refelem.quadrature(FORM_DEGREE)
    det = np.abs(mesh.cell_geometry().det)

    residual = np.zeros(flux_space.dof_count)
    total = np.zeros(flux_space.dof_count)
    for cells in cell_chunks(mesh):
        divergence = flux_space.tabulate(rule.points, cells).divergence
        dx = rule.weights[None, :] * det[cells][:, None]
        areas = dx.sum(axis=1)
        average = np.einsum("cq,cqi->ci", dx, divergence) / areas[:, None]
        deviation = divergence - average[:, None, :]
        local_residual = np.einsum("cq,cqi->ci", dx, deviation ** 2)
        local_total = np.einsum("cq,cqi->ci", dx, divergence ** 2)

        dofs = flux_space.cell_dofs[cells].reshape(-1)
        residual += np.bincount(
            dofs, weights=local_residual.reshape(-1), minlength=flux_space.dof_count
        )
        total += np.bincount(
            dofs, weights=local_total.reshape(-1), minlength=flux_space.dof_count
        )

    ratios = np.sqrt(residual) / np.maximum(np.sqrt(total), 1e-14)
    return float(ratios.max())


###########################################
# Stokes inf-sup
###########################################


def _restrict(
    matrix: scipy.sparse.spmatrix, rows: np.ndarray, columns: np.ndarray
) -> scipy.sparse.csr_matrix:
    return scipy.sparse.csr_matrix(matrix)[rows][:, columns]


def stokes_constant(
    displacement_space: FunctionSpace, pressure_space: FunctionSpace
) -> float:
    """
    The discrete Stokes inf-sup constant: the square root of the smallest
    eigenvalue of B G^-1 B^T q = lambda M q on pressures with zero mean, where
    G is the vector H1 Gram of the displacement space on its free DOFs.
    """
    free = displacement_space.free_dofs
    gram = _restrict(
        assemble_form("h1", displacement_space, displacement_space), free, free
    )
    divergence = assemble_form("b_uq", displacement_space, pressure_space)[:, free]
    mass = assemble_form("mass", pressure_space, pressure_space)

    solved = factor_solve(gram, divergence.T.toarray())
    schur = divergence @ solved
    pairs = smallest_generalized_eigenpairs(
        schur, mass, k=1, deflation=np.ones(pressure_space.dof_count)
    )
    return math.sqrt(max(pairs.values[0], 0.0))


def stokes_infsup(
    displacement_kind: str = "P2v",
    pressure_kind: str = "DG0",
    levels: Sequence[int] = (4, 8, 16),
) -> List[float]:
    """The Stokes inf-sup constant of a clamped displacement space per level."""
    constants = []
    for n_div in levels:
        start = time.time()
        mesh = build_unit_square(n_div)
        U = build_space(displacement_kind, mesh, boundary="dirichlet")
        Q = build_space(pressure_kind, mesh)
        constants.append(stokes_constant(U, Q))
        logging.info(
            "Stokes inf-sup %s x %s on n_div=%d: %.6e in %.2fs",
            displacement_kind,
            pressure_kind,
            n_div,
            constants[-1],
            time.time() - start,
        )
    return constants


###########################################
# Darcy Brezzi constants
###########################################


class DarcyConstants(NamedTuple):
    """Brezzi constants of a flux/pressure pair under one norm pairing.

    .. py:attribute:: beta

        inf-sup constant of b on pressures with zero mean

    .. py:attribute:: alpha_kernel

        coercivity of c on the discrete kernel of b (nan for an empty kernel)

    .. py:attribute:: continuity_b

        continuity constant of b

    .. py:attribute:: continuity_c

        largest Rayleigh quotient of c against the flux Gram

    .. py:attribute:: kernel_dim

        number of spurious pressure modes besides constants
    """

    beta: float
    alpha_kernel: float
    continuity_b: float
    continuity_c: float
    kernel_dim: int


def _darcy_grams(
    norm_pairing: str,
    mass: scipy.sparse.spmatrix,
    divdiv: scipy.sparse.spmatrix,
    pressure_mass: scipy.sparse.spmatrix,
    kappa: float,
) -> Tuple[scipy.sparse.spmatrix, scipy.sparse.spmatrix]:
    if norm_pairing == "standard":
        return mass + divdiv, pressure_mass
    if norm_pairing == "A":
        return mass / kappa + mass + divdiv, pressure_mass
    if norm_pairing == "B":
        return (mass + divdiv) / kappa, kappa * pressure_mass
    if norm_pairing == "C":
        raise ValueError(
            "Norm pairing C needs an H1 pressure and is not defined for DG0"
        )
    raise ValueError(f"Invalid norm pairing {norm_pairing}")


def darcy_brezzi(
    flux_space: FunctionSpace,
    pressure_space: FunctionSpace,
    norm_pairing: NormPairing = "standard",
    kappa: float = 1.0,
) -> DarcyConstants:
    """Brezzi constants of the Darcy saddle point problem.

    Args:
        flux_space (:class:`FunctionSpace`): The flux space with its normal
            boundary constraints.
        pressure_space (:class:`FunctionSpace`): The pressure space.
        norm_pairing (str): standard (H(div) x L2), A (kappa^-1/2 L2
            intersected with H(div), x L2) or B (kappa^-1/2 H(div) x
            kappa^1/2 L2).
        kappa (float): Conductivity.

    Returns:
        The :class:`DarcyConstants`.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    params = ProblemParams(kappa=kappa)

    free = flux_space.free_dofs
    mass = _restrict(assemble_form("mass", flux_space, flux_space), free, free)
    divdiv = _restrict(assemble_form("divdiv", flux_space, flux_space), free, free)
    c_form = _restrict(
        assemble_form("c", flux_space, flux_space, params), free, free
    )
    pressure_mass = assemble_form("mass", pressure_space, pressure_space)
    flux_gram, pressure_gram = _darcy_grams(
        norm_pairing, mass, divdiv, pressure_mass, kappa
    )

    divergence = assemble_form("b_wq", flux_space, pressure_space)[:, free]
    schur = divergence @ factor_solve(flux_gram, divergence.T.toarray())
    constants = np.ones(pressure_space.dof_count)

    beta = smallest_generalized_eigenpairs(
        schur, pressure_gram, k=1, deflation=constants
    ).values[0]
    continuity_b = largest_generalized_eigenvalue(schur, pressure_gram)
    continuity_c = largest_generalized_eigenvalue(c_form, flux_gram)

    dense_divergence = divergence.toarray()
    kernel = scipy.linalg.null_space(dense_divergence)
    if kernel.shape[1] == 0:
        alpha_kernel = math.nan
    else:
        alpha_kernel = float(
            scipy.linalg.eigh(
                kernel.T @ (c_form @ kernel),
                kernel.T @ (flux_gram @ kernel),
                eigvals_only=True,
                subset_by_index=[0, 0],
            )[0]
        )
    rank = np.linalg.matrix_rank(dense_divergence)
    kernel_dim = max(pressure_space.dof_count - rank - 1, 0)

    return DarcyConstants(
        beta=math.sqrt(max(beta, 0.0)),
        alpha_kernel=alpha_kernel,
        continuity_b=math.sqrt(max(continuity_b, 0.0)),
        continuity_c=continuity_c,
        kernel_dim=int(kernel_dim),
    )


###########################################
# Composite inf-sup
###########################################


def composite_infsup(
    pairing: str,
    mesh: Mesh,
    kappa: float,
    c0: float,
    tau: float = 1.0,
    flux_boundary: FluxBoundary = "normal",
) -> float:
    """
    The smallest singular value of the three-field step operator in the
    norm ||u||_1^2 + (tau / kappa) ||w||^2 + tau^2 ||div w||^2 + ||q||^2,
    restricted to pressures with zero mean.

    The value is bounded below uniformly in kappa and c0 but not constant:
    it drops from kappa = 1 to a plateau once the flux decouples, and it
    never decreases when c0 grows.
    """
    check_pairing(pairing)
    if mesh.n_div > COMPOSITE_MAX_DIV:
        raise ValueError(
            f"Composite inf-sup is computed for n_div <= {COMPOSITE_MAX_DIV}, "
            f"got {mesh.n_div}"
        )
    start = time.time()
    params = ProblemParams(kappa=kappa, c0=c0, tau=tau, T=tau)

    u_kind, w_kind, q_kind = PAIRINGS[pairing]
    U = build_space(u_kind, mesh)
    W = build_space(w_kind, mesh, flux_space_boundary(w_kind, flux_boundary))
    Q = build_space(q_kind, mesh)
    u_free, w_free = U.free_dofs, W.free_dofs

    def block(kind, trial, test, rows, columns):
        matrix = assemble_form(kind, trial, test, params)
        return matrix[rows][:, columns].toarray()

    all_q = np.arange(Q.dof_count)
    A = block("a", U, U, u_free, u_free)
    B_u = block("b_uq", U, Q, all_q, u_free)
    B_z = block("b_wq", W, Q, all_q, w_free)
    C = block("c", W, W, w_free, w_free)
    D = block("d", Q, Q, all_q, all_q)
    pressure_mass = block("mass", Q, Q, all_q, all_q)

    operator = np.block(
        [
            [A, np.zeros((len(u_free), len(w_free))), B_u.T],
            [np.zeros((len(w_free), len(u_free))), tau * C, tau * B_z.T],
            [B_u, tau * B_z, -D],
        ]
    )
    gram = scipy.linalg.block_diag(
        block("h1", U, U, u_free, u_free),
        tau / kappa * block("mass", W, W, w_free, w_free)
        + tau ** 2 * block("divdiv", W, W, w_free, w_free),
        pressure_mass,
    )

    complement = scipy.linalg.block_diag(
        np.eye(len(u_free) + len(w_free)),
        scipy.linalg.null_space(pressure_mass.sum(axis=0)[None, :]),
    )
    reduced = complement.T @ operator @ complement
    reduced_gram = complement.T @ gram @ complement
    reduced_gram = 0.5 * (reduced_gram + reduced_gram.T)

    normal = reduced.T @ scipy.linalg.cho_solve(
        scipy.linalg.cho_factor(reduced_gram), reduced
    )
    smallest = smallest_generalized_eigenpairs(
        normal, reduced_gram, k=1
    ).values[0]
    gamma = math.sqrt(max(smallest, 0.0))

    logging.info(
        "Composite inf-sup %s n_div=%d kappa=%g c0=%g: %.6e in %.2fs",
        pairing,
        mesh.n_div,
        kappa,
        c0,
        gamma,
        time.time() - start,
    )
    return gamma


###########################################
# Reports
###########################################


@dataclass
class DiagnosticRecord:
    pairing: str
    n_div: int
    kappa: float
    c0: float
    containment: float
    beta_stokes: float
    darcy: Dict[str, DarcyConstants]
    gamma: float

    def to_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "pairing": self.pairing,
            "n_div": self.n_div,
            "kappa": self.kappa,
            "c0": self.c0,
            "containment": self.containment,
            "beta_stokes": self.beta_stokes,
        }
        for norm_pairing, constants in self.darcy.items():
            for name, value in constants._asdict().items():
                row[f"{name}_{norm_pairing}"] = value
        row["gamma"] = self.gamma
        return row


@dataclass
class DiagnosticReport:
    """Stability diagnostics, one record per (pairing, level, kappa, c0)."""

    records: List[DiagnosticRecord] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.to_row() for record in self.records])

    def to_formatted_frame(self) -> pd.DataFrame:
        frame = self.to_frame()
        for column in frame.columns:
            if column in ("pairing", "n_div") or column.startswith("kernel_dim"):
                continue
            if column in ("kappa", "c0"):
                frame[column] = frame[column].map(lambda v: "%g" % v)
            else:
                frame[column] = frame[column].map(format_value)
        return frame

    def to_csv(self, path: str) -> None:
        self.to_formatted_frame().to_csv(path, index=False)

    def to_markdown(self) -> str:
        frame = self.to_formatted_frame()
        header = list(frame.columns)
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "---|" * len(header),
        ]
        for _, row in frame.iterrows():
            cells = [str(row[name]) for name in header]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def run_diagnostics(
    pairings: Sequence[str],
    levels: Sequence[int],
    kappas: Sequence[float],
    c0s: Sequence[float] = (0.0,),
    tau: float = 1.0,
    flux_boundary: FluxBoundary = "normal",
) -> DiagnosticReport:
    """
    Every diagnostic for every (pairing, level, kappa, c0). The Darcy
    constants do not depend on c0 and are computed once per kappa.
    """
    report = DiagnosticReport()
    for pairing in pairings:
        check_pairing(pairing)
        u_kind, w_kind, q_kind = PAIRINGS[pairing]
        for n_div in levels:
            mesh = build_unit_square(n_div)
            U = build_space(u_kind, mesh, boundary="dirichlet")
            W = build_space(
                w_kind, mesh, flux_space_boundary(w_kind, flux_boundary)
            )
            Q = build_space(q_kind, mesh)
            containment = containment_residual(W, Q)
            beta_stokes = stokes_constant(U, Q)
            for kappa in kappas:
                darcy = {
                    norm_pairing: darcy_brezzi(W, Q, norm_pairing, kappa)
                    for norm_pairing in NORM_PAIRINGS
                }
                for c0 in c0s:
                    gamma = (
                        composite_infsup(
                            pairing, mesh, kappa, c0, tau, flux_boundary
                        )
                        if n_div <= COMPOSITE_MAX_DIV
                        else math.nan
                    )
                    report.records.append(
                        DiagnosticRecord(
                            pairing=pairing,
                            n_div=n_div,
                            kappa=kappa,
                            c0=c0,
                            containment=containment,
                            beta_stokes=beta_stokes,
                            darcy=darcy,
                            gamma=gamma,
                        )
                    )
    return report
