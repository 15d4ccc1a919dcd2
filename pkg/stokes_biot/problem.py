from __future__ import annotations

import dataclasses
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from . import refelem
from .mesh import build_unit_square

PI = math.pi


@dataclass(frozen=True)
class ProblemParams:
    """
        Material and time stepping parameters.

        The stress is sigma(u) = shear_factor * mu * eps(u) + lmbda * tr(eps(u)) I.
        The default shear_factor of 2 gives the usual 2 mu eps(u) convention,
        shear_factor 1 gives mu eps(u).
    """

    kappa: float = 1.0
    c0: float = 0.0
    tau: float = 1.0
    T: float = 1.0
    mu: float = 1.0
    lmbda: float = 1.0
    alpha: float = 1.0
    shear_factor: float = 2.0

    def __post_init__(self) -> None:
        if not 0 < self.kappa <= 1:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if not 0 <= self.c0 <= 1:
            raise ValueError(f"c0 must lie in [0, 1], got {self.c0}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        steps = self.T / self.tau
        if abs(steps - round(steps)) > 1e-12 * max(1.0, steps):
            raise ValueError(
                f"tau = {self.tau} does not divide T = {self.T} into whole steps"
            )
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lmbda >= 0:
            raise ValueError(f"lmbda must be nonnegative, got {self.lmbda}")
        if self.alpha != 1.0:
            raise ValueError(f"Only alpha = 1 is supported, got {self.alpha}")
        if not self.shear_factor > 0:
            raise ValueError(f"shear_factor must be positive, got {self.shear_factor}")

    @property
    def num_steps(self) -> int:
        return int(round(self.T / self.tau))

    def replace(self, **changes: Any) -> ProblemParams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, stored: Dict[str, Any]) -> ProblemParams:
        return cls(**{key: float(value) for key, value in stored.items()})


class VerificationError(RuntimeError):
    def __init__(self, message: str, report: ManufacturedReport):
        super().__init__(message)
        self.report = report


###########################################
# Problems
###########################################


class BiotProblem(ABC):
    """
        Exact fields and data of a Biot problem on the unit square.

        Every closure takes a time t and points x of shape (n, 2) and returns
        (n,) scalars, (n, 2) vectors or (n, 2, 2) tensors.
    """

    params: ProblemParams

    @abstractmethod
    def displacement(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def displacement_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def displacement_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def pressure(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def pressure_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def pressure_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def pressure_laplacian(self, t: float, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def body_force(self, t: float, x: np.ndarray) -> np.ndarray:
        """f = -div sigma(u) - alpha grad p."""

    @abstractmethod
    def fluid_source(self, t: float, x: np.ndarray) -> np.ndarray:
        """s = alpha div u_t + div z - c0 p_t."""

    def flux_source(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2))

    def flux(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.params.kappa * self.pressure_gradient(t, x)

    def flux_divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.params.kappa * self.pressure_laplacian(t, x)

    def displacement_divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        gradient = self.displacement_gradient(t, x)
        return gradient[:, 0, 0] + gradient[:, 1, 1]

    def strain(self, t: float, x: np.ndarray) -> np.ndarray:
        gradient = self.displacement_gradient(t, x)
        return 0.5 * (gradient + np.swapaxes(gradient, 1, 2))

    def stress(self, t: float, x: np.ndarray) -> np.ndarray:
        params = self.params
        strain = self.strain(t, x)
        trace = strain[:, 0, 0] + strain[:, 1, 1]
        return (
            params.shear_factor * params.mu * strain
            + params.lmbda * trace[:, None, None] * np.eye(2)[None]
        )


class ZeroProblem(BiotProblem):
    """All fields and data vanish."""

    def __init__(self, params: ProblemParams):
        self.params = params

    def displacement(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2))

    def displacement_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2, 2))

    def displacement_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2))

    def pressure(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x))

    def pressure_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2))

    def pressure_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x))

    def pressure_laplacian(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x))

    def body_force(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((len(x), 2))

    def fluid_source(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x))


class ManufacturedProblem(BiotProblem):
    """
        The smooth manufactured solution on the unit square

            u = (t sin(pi x) sin(pi y), 2 t sin(3 pi x) sin(4 pi y))
            p = (t + 1) ((x - 1) x (y - 1) y)^2 - (t + 1) / 900
            z = kappa grad p

        u vanishes on the boundary, z.n vanishes on the boundary and p has
        zero mean for every t. Everything is linear in t.
    """

    PRESSURE_OFFSET = 1.0 / 900.0

    def __init__(self, params: ProblemParams):
        self.params = params

    @staticmethod
    def _split(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return x[:, 0], x[:, 1]

    def displacement(self, t: float, x: np.ndarray) -> np.ndarray:
        x1, x2 = self._split(x)
        return t * np.stack(
            [
                np.sin(PI * x1) * np.sin(PI * x2),
                2 * np.sin(3 * PI * x1) * np.sin(4 * PI * x2),
            ],
            axis=1,
        )

    def displacement_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.displacement(1.0, x)

    def displacement_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        x1, x2 = self._split(x)
        gradient = np.empty((len(x1), 2, 2))
        gradient[:, 0, 0] = PI * np.cos(PI * x1) * np.sin(PI * x2)
        gradient[:, 0, 1] = PI * np.sin(PI * x1) * np.cos(PI * x2)
        gradient[:, 1, 0] = 6 * PI * np.cos(3 * PI * x1) * np.sin(4 * PI * x2)
        gradient[:, 1, 1] = 8 * PI * np.sin(3 * PI * x1) * np.cos(4 * PI * x2)
        return t * gradient

    def _displacement_laplacian(self, t: float, x: np.ndarray) -> np.ndarray:
        u = self.displacement(t, x)
        return np.stack([-2 * PI ** 2 * u[:, 0], -25 * PI ** 2 * u[:, 1]], axis=1)

    def _displacement_grad_div(self, t: float, x: np.ndarray) -> np.ndarray:
        x1, x2 = self._split(x)
        return t * np.stack(
            [
                -(PI ** 2) * np.sin(PI * x1) * np.sin(PI * x2)
                + 24 * PI ** 2 * np.cos(3 * PI * x1) * np.cos(4 * PI * x2),
                PI ** 2 * np.cos(PI * x1) * np.cos(PI * x2)
                - 32 * PI ** 2 * np.sin(3 * PI * x1) * np.sin(4 * PI * x2),
            ],
            axis=1,
        )

    def stress_divergence(self, t: float, x: np.ndarray) -> np.ndarray:
        params = self.params
        # div eps(u) = (laplace u + grad div u) / 2
        grad_div = self._displacement_grad_div(t, x)
        return (
            0.5 * params.shear_factor * params.mu
            * (self._displacement_laplacian(t, x) + grad_div)
            + params.lmbda * grad_div
        )

    def _bubble(self, x: np.ndarray) -> Tuple[np.ndarray, ...]:
        x1, x2 = self._split(x)
        X = x1 * (x1 - 1)
        Y = x2 * (x2 - 1)
        return X, Y, 2 * x1 - 1, 2 * x2 - 1

    def pressure(self, t: float, x: np.ndarray) -> np.ndarray:
        return (t + 1) * self.pressure_rate(t, x)

    def pressure_rate(self, t: float, x: np.ndarray) -> np.ndarray:
        X, Y, _, _ = self._bubble(x)
        return (X * Y) ** 2 - self.PRESSURE_OFFSET

    def pressure_gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        X, Y, dX, dY = self._bubble(x)
        phi = X * Y
        return (t + 1) * 2 * phi[:, None] * np.stack([dX * Y, X * dY], axis=1)

    def pressure_laplacian(self, t: float, x: np.ndarray) -> np.ndarray:
        X, Y, dX, dY = self._bubble(x)
        phi = X * Y
        grad_phi_squared = (dX * Y) ** 2 + (X * dY) ** 2
        laplace_phi = 2 * Y + 2 * X
        return (t + 1) * (2 * grad_phi_squared + 2 * phi * laplace_phi)

    def body_force(self, t: float, x: np.ndarray) -> np.ndarray:
        return -self.stress_divergence(t, x) - self.params.alpha * self.pressure_gradient(
            t, x
        )

    def fluid_source(self, t: float, x: np.ndarray) -> np.ndarray:
        params = self.params
        return (
            params.alpha * self.displacement_divergence(1.0, x)
            + self.flux_divergence(t, x)
            - params.c0 * self.pressure_rate(t, x)
        )


def exact_fields(params: ProblemParams) -> ManufacturedProblem:
    return ManufacturedProblem(params)


###########################################
# Verification
###########################################


@dataclass
class ManufacturedReport:
    samples: int
    residuals: Dict[str, float]
    worst_points: Dict[str, Tuple[float, float, float]]
    boundary_displacement: float
    boundary_normal_flux: float
    pressure_mean: float

    TOLERANCE = 1e-4
    BOUNDARY_TOLERANCE = 1e-13
    MEAN_TOLERANCE = 1e-12

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    @property
    def passed(self) -> bool:
        return (
            self.max_residual < self.TOLERANCE
            and self.boundary_displacement < self.BOUNDARY_TOLERANCE
            and self.boundary_normal_flux < self.BOUNDARY_TOLERANCE
            and abs(self.pressure_mean) < self.MEAN_TOLERANCE
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "samples": self.samples,
            "residuals": dict(self.residuals),
            "worst_points": {k: list(v) for k, v in self.worst_points.items()},
            "boundary_displacement": self.boundary_displacement,
            "boundary_normal_flux": self.boundary_normal_flux,
            "pressure_mean": self.pressure_mean,
        }


def _central_divergence(
    closure: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float
) -> np.ndarray:
    """Divergence of the last axis of a vector or tensor closure."""
    total = 0.0
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        forward = closure(x + shift)[..., axis]
        backward = closure(x - shift)[..., axis]
        total = total + (forward - backward) / (2 * step)
    return total


def _central_gradient(
    closure: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float
) -> np.ndarray:
    """Gradient along a new last axis."""
    parts = []
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        parts.append((closure(x + shift) - closure(x - shift)) / (2 * step))
    return np.stack(parts, axis=-1)


def domain_mean(
    closure: Callable[[np.ndarray], np.ndarray], n_div: int = 2, degree: int = 8
) -> float:
    """Mean over the unit square of a scalar closure by cell quadrature."""
    mesh = build_unit_square(n_div)
    rule = refelem.quadrature(degree)
    geometry = mesh.cell_geometry()
    x = geometry.origin[:, None, :] + np.einsum(
        "cij,qj->cqi", geometry.jacobian, rule.points
    )
    values = closure(x.reshape(-1, 2)).reshape(x.shape[:2])
    return float(np.sum(values @ rule.weights * np.abs(geometry.det)))


def verify_manufactured(
    problem: BiotProblem,
    samples: int = 1000,
    seed: int = 0,
    step: float = 1e-5,
    raise_on_failure: bool = True,
) -> ManufacturedReport:
    """
    Check the closed-form data of a problem against finite-difference
    derivatives of its fields at random interior points and times.

    Args:
        problem (:class:`BiotProblem`): The problem to check.
        samples (int): Number of random (t, x) samples, at least 100.
        seed (int): Seed of the sampler.
        step (float): Finite-difference step.
        raise_on_failure (bool): Raise :class:`VerificationError` on failure.

    Returns:
        A :class:`ManufacturedReport`.
    """
    if samples < 100:
        raise ValueError(f"Need at least 100 samples, got {samples}")

    params = problem.params
    rng = np.random.default_rng(seed)
    times = rng.uniform(0.0, params.T, size=samples)
    points = rng.uniform(0.05, 0.95, size=(samples, 2))

    residuals: Dict[str, np.ndarray] = {
        name: np.zeros(samples)
        for name in (
            "momentum",
            "darcy",
            "mass",
            "displacement_gradient",
            "pressure_gradient",
            "displacement_rate",
            "pressure_rate",
        )
    }

    def vector_norm(values: np.ndarray) -> np.ndarray:
        return np.abs(values).reshape(len(values), -1).max(axis=1)

    for t in np.unique(times):
        chosen = times == t
        x = points[chosen]

        def stress(y: np.ndarray) -> np.ndarray:
            return problem.stress(t, y)

        momentum = (
            -_central_divergence(stress, x, step)
            - params.alpha * problem.pressure_gradient(t, x)
            - problem.body_force(t, x)
        )
        residuals["momentum"][chosen] = vector_norm(momentum)

        pressure_gradient = _central_gradient(lambda y: problem.pressure(t, y), x, step)
        darcy = (
            problem.flux(t, x) / params.kappa
            - pressure_gradient
            - problem.flux_source(t, x)
        )
        residuals["darcy"][chosen] = vector_norm(darcy)

        pressure_rate = (
            problem.pressure(t + step, x) - problem.pressure(t - step, x)
        ) / (2 * step)
        displacement_rate = (
            problem.displacement(t + step, x) - problem.displacement(t - step, x)
        ) / (2 * step)

        mass = (
            params.alpha
            * _central_divergence(lambda y: problem.displacement_rate(t, y), x, step)
            + _central_divergence(lambda y: problem.flux(t, y), x, step)
            - params.c0 * pressure_rate
            - problem.fluid_source(t, x)
        )
        residuals["mass"][chosen] = np.abs(mass)

        residuals["displacement_gradient"][chosen] = vector_norm(
            problem.displacement_gradient(t, x)
            - _central_gradient(lambda y: problem.displacement(t, y), x, step)
        )
        residuals["pressure_gradient"][chosen] = vector_norm(
            problem.pressure_gradient(t, x) - pressure_gradient
        )
        residuals["displacement_rate"][chosen] = vector_norm(
            problem.displacement_rate(t, x) - displacement_rate
        )
        residuals["pressure_rate"][chosen] = np.abs(
            problem.pressure_rate(t, x) - pressure_rate
        )

    worst_points = {}
    for name, values in residuals.items():
        worst = int(np.argmax(values))
        worst_points[name] = (
            float(times[worst]),
            float(points[worst, 0]),
            float(points[worst, 1]),
        )

    # 100 samples on each side of the square.
    side = rng.uniform(0.0, 1.0, size=100)
    boundary_points = np.concatenate(
        [
            np.stack([side, np.zeros_like(side)], axis=1),
            np.stack([np.ones_like(side), side], axis=1),
            np.stack([side, np.ones_like(side)], axis=1),
            np.stack([np.zeros_like(side), side], axis=1),
        ]
    )
    boundary_normals = np.repeat(
        np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), 100, axis=0
    )
    boundary_times = rng.uniform(0.0, params.T, size=len(boundary_points))

    boundary_displacement = 0.0
    boundary_normal_flux = 0.0
    for t, x, n in zip(boundary_times, boundary_points, boundary_normals):
        boundary_displacement = max(
            boundary_displacement,
            float(np.abs(problem.displacement(t, x[None])).max()),
        )
        boundary_normal_flux = max(
            boundary_normal_flux, float(abs(problem.flux(t, x[None])[0] @ n))
        )

    pressure_mean = domain_mean(lambda y: problem.pressure(params.T, y))

    report = ManufacturedReport(
        samples=samples,
        residuals={name: float(values.max()) for name, values in residuals.items()},
        worst_points=worst_points,
        boundary_displacement=boundary_displacement,
        boundary_normal_flux=boundary_normal_flux,
        pressure_mean=pressure_mean,
    )
    logging.info(
        "Manufactured solution check: max residual %.3e, boundary %.3e / %.3e, mean %.3e",
        report.max_residual,
        boundary_displacement,
        boundary_normal_flux,
        pressure_mean,
    )

    if raise_on_failure and not report.passed:
        worst_name = max(report.residuals, key=lambda k: report.residuals[k])
        raise VerificationError(
            f"Manufactured solution check failed: {worst_name} residual "
            f"{report.residuals[worst_name]:.3e} at (t, x, y) = "
            f"{report.worst_points[worst_name]}",
            report,
        )
    return report
