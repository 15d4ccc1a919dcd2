from __future__ import annotations

import concurrent.futures
import functools
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import scipy.sparse
from tqdm import tqdm

from .assemble import (
    FLUX_BOUNDARIES,
    PAIRINGS,
    BiotSystem,
    FluxBoundary,
    assemble_biot_step,
    assemble_functional,
    assemble_load,
    check_pairing,
)
from .linsolve import EigenSolverError, SolverError, factorize
from .mesh import Mesh, mesh_hierarchy
from .metrics import (
    QUANTITIES,
    ErrorTable,
    Reference,
    RelativeErrors,
    relative_error,
)
from .problem import BiotProblem, ManufacturedProblem, ProblemParams
from .space import DiscreteField, apply_essential_bcs, interpolate, l2_project

Initialization = Union[Literal["interpolate"], Literal["consistent"]]

INITIALIZATIONS = ("interpolate", "consistent")
REFERENCES = ("interpolant", "analytic")


@dataclass
class TimeLoopState:
    """The discrete solution after step m, at time t = m tau."""

    m: int
    t: float
    u: DiscreteField
    z: DiscreteField
    p: DiscreteField
    multiplier: float = 0.0


###########################################
# Initial data
###########################################


def _interpolated_state(
    system: BiotSystem, problem: BiotProblem
) -> TimeLoopState:
    return TimeLoopState(
        m=0,
        t=0.0,
        u=interpolate(
            functools.partial(problem.displacement, 0.0), system.displacement_space
        ),
        z=interpolate(functools.partial(problem.flux, 0.0), system.flux_space),
        p=l2_project(
            functools.partial(problem.pressure, 0.0), system.pressure_space
        ),
    )


def _loads(
    system: BiotSystem, problem: BiotProblem, t: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    U, W, Q = system.displacement_space, system.flux_space, system.pressure_space
    F = assemble_functional(functools.partial(problem.body_force, t), U)
    G = assemble_functional(functools.partial(problem.flux_source, t), W)
    S = assemble_functional(functools.partial(problem.fluid_source, t), Q)
    F[U.constrained_dofs] = 0.0
    G[W.constrained_dofs] = 0.0
    return F, G, S


def _consistent_state(
    system: BiotSystem, problem: BiotProblem
) -> TimeLoopState:
    """
    Initial data on the discrete trajectory that is linear in time.

    With loads linear in t the fully discrete solution from these data is
    u_h(t) = u0 + t u1 (and likewise for z_h, p_h) at every step, for any tau.
    Two Darcy saddle point solves give (z1, p1) and (z0, p0), each followed by
    an elasticity solve for u1 and u0.
    """
    if system.flux_space.kind != "RT0":
        raise ValueError(
            f"Consistent initial data needs a Darcy stable flux space, "
            f"got {system.flux_space.kind}"
        )
    if not system.use_mean_constraint:
        raise ValueError("Consistent initial data needs the mean-value constraint")

    U, W, Q = system.displacement_space, system.flux_space, system.pressure_space
    m_column = scipy.sparse.csr_matrix(system.m[:, None])
    darcy, _ = apply_essential_bcs(
        scipy.sparse.bmat(
            [
                [system.C, system.B_z.T, None],
                [system.B_z, None, m_column],
                [None, m_column.T, None],
            ],
            format="csr",
        ),
        None,
        W.constrained_dofs,
    )
    elasticity, _ = apply_essential_bcs(system.A, None, U.constrained_dofs)
    darcy_solver = factorize(darcy)
    elasticity_solver = factorize(elasticity)

    F0, G0, S0 = _loads(system, problem, 0.0)
    F1, G1, S1 = _loads(system, problem, 1.0)
    F1, G1, S1 = F1 - F0, G1 - G0, S1 - S0

    def solve_darcy(flux_load: np.ndarray, pressure_load: np.ndarray):
        rhs = np.concatenate([flux_load, pressure_load, [0.0]])
        rhs[W.constrained_dofs] = 0.0
        solution = darcy_solver.solve(rhs)
        return solution[: W.dof_count], solution[W.dof_count : -1]

    def solve_elasticity(load: np.ndarray, p: np.ndarray) -> np.ndarray:
        rhs = load - system.B_u.T @ p
        rhs[U.constrained_dofs] = 0.0
        return elasticity_solver.solve(rhs)

    z1, p1 = solve_darcy(G1, S1)
    u1 = solve_elasticity(F1, p1)
    z0, p0 = solve_darcy(G0, S0 - system.B_u @ u1 + system.D @ p1)
    u0 = solve_elasticity(F0, p0)

    logging.info(
        "Consistent initial data: |u0| = %.3e, |p0| = %.3e",
        np.abs(u0).max(),
        np.abs(p0).max(),
    )
    return TimeLoopState(
        m=0,
        t=0.0,
        u=DiscreteField(U, u0),
        z=DiscreteField(W, z0),
        p=DiscreteField(Q, p0),
    )


def initial_state(
    system: BiotSystem,
    problem: BiotProblem,
    initialization: Initialization = "interpolate",
) -> TimeLoopState:
    """Initial iterates at t = 0.

    Args:
        system (:class:`BiotSystem`): The step system.
        problem (:class:`BiotProblem`): Supplies the exact initial data.
        initialization (str): interpolate uses interpolants of u(0), z(0)
            and the L2 projection of p(0); consistent uses the discrete
            linear-in-time trajectory.

    Returns:
        The :class:`TimeLoopState` at m = 0.
    """
    if initialization == "interpolate":
        return _interpolated_state(system, problem)
    if initialization == "consistent":
        return _consistent_state(system, problem)
    raise ValueError(f"Invalid initialization {initialization}")


###########################################
# Time stepping
###########################################


def step(
    system: BiotSystem, state: TimeLoopState, problem: BiotProblem
) -> TimeLoopState:
    """Advance one implicit Euler step, reusing the system factorization."""
    m = state.m + 1
    t = m * system.params.tau
    rhs = assemble_load(
        system, problem, t, previous=(state.u.coefficients, state.p.coefficients)
    )
    try:
        solution = system.factorization().solve(rhs)
    except SolverError as error:
        raise SolverError(
            f"Step {m} failed: {error}", index=error.index, residual=error.residual
        ) from error

    u, z, p, multiplier = system.split(solution)
    return TimeLoopState(
        m=m,
        t=t,
        u=DiscreteField(system.displacement_space, u),
        z=DiscreteField(system.flux_space, z),
        p=DiscreteField(system.pressure_space, p),
        multiplier=multiplier,
    )


def march(
    system: BiotSystem,
    problem: BiotProblem,
    initialization: Initialization = "interpolate",
) -> TimeLoopState:
    """Run all steps from t = 0 to T."""
    state = initial_state(system, problem, initialization)
    for _ in range(system.params.num_steps):
        state = step(system, state, problem)
    return state


###########################################
# Convergence studies
###########################################


@dataclass
class StudySpec:
    """
        A convergence study over every (kappa, c0, n_div) cell of one pairing.

        Cells are independent and run sequentially unless jobs > 1. The flux
        is clamped on the whole boundary by default, which the manufactured
        flux satisfies; normal keeps only z.n = 0.
    """

    pairing: str
    kappas: List[float]
    c0s: List[float]
    levels: List[int]
    tau: float = 1.0
    T: float = 1.0
    mu: float = 1.0
    lmbda: float = 1.0
    shear_factor: float = 2.0
    norms: List[str] = field(
        default_factory=lambda: ["displacement", "pressure", "flux"]
    )
    initialization: Initialization = "interpolate"
    reference: Reference = "interpolant"
    flux_boundary: FluxBoundary = "clamped"
    jobs: int = 1

    def __post_init__(self) -> None:
        check_pairing(self.pairing)
        for name in ("kappas", "c0s", "levels", "norms"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"Study needs a nonempty {name} list")
        for quantity in self.norms:
            if quantity not in QUANTITIES:
                raise ValueError(f"Invalid norm {quantity}")
        if self.initialization not in INITIALIZATIONS:
            raise ValueError(f"Invalid initialization {self.initialization}")
        if self.initialization == "consistent" and PAIRINGS[self.pairing][1] != "RT0":
            raise ValueError(
                f"Consistent initial data is not available for {self.pairing}"
            )
        if self.reference not in REFERENCES:
            raise ValueError(f"Invalid reference {self.reference}")
        if self.flux_boundary not in FLUX_BOUNDARIES:
            raise ValueError(f"Invalid flux boundary {self.flux_boundary}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be at least 1, got {self.jobs}")
        # Validates the parameter ranges and tau * N = T.
        for kappa, c0 in itertools.product(self.kappas, self.c0s):
            self.params(kappa, c0)

    def params(self, kappa: float, c0: float) -> ProblemParams:
        return ProblemParams(
            kappa=kappa,
            c0=c0,
            tau=self.tau,
            T=self.T,
            mu=self.mu,
            lmbda=self.lmbda,
            shear_factor=self.shear_factor,
        )


def solve_cell(
    spec: StudySpec, kappa: float, c0: float, mesh: Mesh
) -> Tuple[RelativeErrors, TimeLoopState]:
    """Run one study cell and return its relative errors and final state."""
    start = time.time()
    params = spec.params(kappa, c0)
    problem = ManufacturedProblem(params)
    system = assemble_biot_step(
        spec.pairing, mesh, params, flux_boundary=spec.flux_boundary
    )
    state = march(system, problem, spec.initialization)
    errors = relative_error(
        state.u,
        state.z,
        state.p,
        problem,
        state.t,
        params.tau,
        params.kappa,
        reference=spec.reference,
    )
    logging.info(
        "Cell %s kappa=%g c0=%g n_div=%d: %s in %.2fs",
        spec.pairing,
        kappa,
        c0,
        mesh.n_div,
        ", ".join(f"{k}={v:.3e}" for k, v in errors._asdict().items()),
        time.time() - start,
    )
    return errors, state


def _run_cell(
    spec: StudySpec, kappa: float, c0: float, mesh: Mesh
) -> Optional[RelativeErrors]:
    try:
        errors, _ = solve_cell(spec, kappa, c0, mesh)
        return errors
    except (
        SolverError,
        EigenSolverError,
        np.linalg.LinAlgError,
        ValueError,
        RuntimeError,
    ) as error:
        logging.exception(
            "Cell %s kappa=%g c0=%g n_div=%d failed: %s",
            spec.pairing,
            kappa,
            c0,
            mesh.n_div,
            error,
        )
        return None


def run_study(spec: StudySpec) -> ErrorTable:
    """Run a convergence study.

    Args:
        spec (:class:`StudySpec`): The study grid.

    Returns:
        An :class:`ErrorTable` with one row per (quantity, kappa, c0). Failed
        cells are recorded as missing entries and the study continues.
    """
    meshes = mesh_hierarchy(spec.levels)
    for mesh in meshes:
        mesh.cell_geometry()

    cells = [
        (kappa, c0, mesh)
        for kappa, c0 in itertools.product(spec.kappas, spec.c0s)
        for mesh in meshes
    ]

    results = {}
    if spec.jobs == 1:
        for kappa, c0, mesh in tqdm(cells, desc=spec.pairing):
            results[(kappa, c0, mesh.n_div)] = _run_cell(spec, kappa, c0, mesh)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            futures = {
                pool.submit(_run_cell, spec, kappa, c0, mesh): (
                    kappa,
                    c0,
                    mesh.n_div,
                )
                for kappa, c0, mesh in cells
            }
            for future in tqdm(
                concurrent.futures.as_completed(futures),
                total=len(futures),
                desc=spec.pairing,
            ):
                results[futures[future]] = future.result()

    table = ErrorTable(spec.pairing, list(spec.levels))
    for kappa, c0, mesh in cells:
        errors = results[(kappa, c0, mesh.n_div)]
        for quantity in spec.norms:
            value = None if errors is None else getattr(errors, quantity)
            table.record(quantity, kappa, c0, mesh.n_div, value)
    return table
