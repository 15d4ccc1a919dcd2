from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from . import refelem
from .problem import BiotProblem
from .space import (
    AnalyticField,
    DiscreteField,
    Field,
    build_space,
    cell_chunks,
    interpolate,
)

NormKind = Union[Literal["L2"], Literal["H1"], Literal["Hdiv"], Literal["W"]]
Reference = Union[Literal["interpolant"], Literal["analytic"]]

ERROR_DEGREE = 8

# Row order of rendered tables.
QUANTITIES = ("displacement", "pressure", "flux", "flux_div")

QUANTITY_LABELS = {
    "displacement": "Displacement (H1)",
    "pressure": "Pressure (L2)",
    "flux": "Flux (W)",
    "flux_div": "Flux (H(div))",
}

FAILURE_MARKER = "failed"


###########################################
# Norms
###########################################


def _squared_integrals(
    field: Field, values: bool, gradients: bool, divergence: bool
) -> Tuple[float, float, float]:
    rule = refelem.quadrature(ERROR_DEGREE)
    det = np.abs(field.mesh.cell_geometry().det)

    totals = [0.0, 0.0, 0.0]
    for cells in cell_chunks(field.mesh):
        dx = rule.weights[None, :] * det[cells][:, None]
        if values:
            v = field.values(rule.points, cells)
            squares = np.sum(v.reshape(dx.shape + (-1,)) ** 2, axis=-1)
            totals[0] += float(np.sum(dx * squares))
        if gradients:
            g = field.gradients(rule.points, cells)
            squares = np.sum(g.reshape(dx.shape + (-1,)) ** 2, axis=-1)
            totals[1] += float(np.sum(dx * squares))
        if divergence:
            d = field.divergence(rule.points, cells)
            totals[2] += float(np.sum(dx * d ** 2))
    return totals[0], totals[1], totals[2]


def norm(
    field: Field, kind: NormKind, tau: float = 1.0, kappa: float = 1.0
) -> float:
    """The L2, H1, H(div) or weighted flux norm of a field.

    The weighted flux norm is sqrt((tau / kappa) ||z||^2 + tau^2 ||div z||^2).

    Args:
        field (:class:`Field`): A discrete field, analytic field or difference.
        kind (str): L2, H1, Hdiv or W.
        tau (float): Time step, used by the W norm.
        kappa (float): Conductivity, used by the W norm.

    Returns:
        The norm, computed with degree 8 quadrature.
    """
    if kind == "L2":
        mass, _, _ = _squared_integrals(field, True, False, False)
        return math.sqrt(mass)
    if kind == "H1":
        mass, stiffness, _ = _squared_integrals(field, True, True, False)
        return math.sqrt(mass + stiffness)
    if kind == "Hdiv":
        if field.value_rank != 1:
            raise ValueError("The H(div) norm needs a vector field")
        mass, _, div = _squared_integrals(field, True, False, True)
        return math.sqrt(mass + div)
    if kind == "W":
        if not kappa > 0:
            raise ValueError(f"The W norm needs kappa > 0, got {kappa}")
        if field.value_rank != 1:
            raise ValueError("The W norm needs a vector field")
        mass, _, div = _squared_integrals(field, True, False, True)
        return math.sqrt(tau / kappa * mass + tau ** 2 * div)
    raise ValueError(f"Invalid norm kind {kind}")


###########################################
# Relative errors
###########################################


class RelativeErrors(NamedTuple):
    displacement: float
    pressure: float
    flux: float
    flux_div: float


def reference_fields(
    problem: BiotProblem, mesh, t: float, reference: Reference = "interpolant"
) -> Tuple[Field, Field, Field]:
    """
    The exact (u, z, p) at time t, either as continuous piecewise cubic
    interpolants on the mesh or as analytic closures.
    """
    u = functools.partial(problem.displacement, t)
    z = functools.partial(problem.flux, t)
    p = functools.partial(problem.pressure, t)

    if reference == "interpolant":
        vector_space = build_space("P3v", mesh)
        scalar_space = build_space("P3s", mesh)
        return (
            interpolate(u, vector_space),
            interpolate(z, vector_space),
            interpolate(p, scalar_space),
        )

    if reference == "analytic":
        return (
            AnalyticField(
                mesh,
                u,
                value_rank=1,
                gradient=functools.partial(problem.displacement_gradient, t),
                divergence=functools.partial(problem.displacement_divergence, t),
            ),
            AnalyticField(
                mesh,
                z,
                value_rank=1,
                divergence=functools.partial(problem.flux_divergence, t),
            ),
            AnalyticField(
                mesh,
                p,
                value_rank=0,
                gradient=functools.partial(problem.pressure_gradient, t),
            ),
        )

    raise ValueError(f"Invalid reference {reference}")


def _relative(
    difference: Field, exact: Field, kind: NormKind, **weights: float
) -> float:
    scale = norm(exact, kind, **weights)
    if scale == 0:
        raise ValueError(f"Exact field has zero {kind} norm, cannot normalize")
    return norm(difference, kind, **weights) / scale


def relative_error(
    u_h: DiscreteField,
    z_h: DiscreteField,
    p_h: DiscreteField,
    problem: BiotProblem,
    t: float,
    tau: float,
    kappa: float,
    reference: Reference = "interpolant",
) -> RelativeErrors:
    """Relative errors of a discrete solution at time t.

    Args:
        u_h, z_h, p_h (:class:`DiscreteField`): The discrete solution.
        problem (:class:`BiotProblem`): Supplies the exact solution.
        t (float): The time level.
        tau (float): Time step of the W norm.
        kappa (float): Conductivity of the W norm.
        reference (str): interpolant (cubic interpolants) or analytic.

    Returns:
        :class:`RelativeErrors` with the H1 displacement, L2 pressure, W flux
        and H(div) flux errors.
    """
    u, z, p = reference_fields(problem, u_h.mesh, t, reference)
    return RelativeErrors(
        displacement=_relative(u - u_h, u, "H1"),
        pressure=_relative(p - p_h, p, "L2"),
        flux=_relative(z - z_h, z, "W", tau=tau, kappa=kappa),
        flux_div=_relative(z - z_h, z, "Hdiv"),
    )


def rate(e_coarse: float, e_fine: float) -> float:
    """The observed order log2(e_coarse / e_fine) between two halvings of h."""
    if not (e_coarse > 0 and e_fine > 0):
        raise ValueError(f"Rates need positive errors, got {e_coarse} and {e_fine}")
    return math.log2(e_coarse / e_fine)


###########################################
# Error tables
###########################################


def format_value(value: Optional[float]) -> str:
    if value is None:
        return FAILURE_MARKER
    return "%.2e" % value


def format_rate(value: Optional[float]) -> str:
    if value is None:
        return ""
    return "%.1f" % value


RowKey = Tuple[str, float, float]


@dataclass
class ErrorTable:
    """
        Relative errors of a convergence study.

        Rows are keyed by (quantity, kappa, c0) and columns by the mesh
        subdivision n_div (h = 1 / n_div). A missing entry (None) marks a
        study cell that failed.
    """

    pairing: str
    levels: List[int]
    rows: Dict[RowKey, List[Optional[float]]] = field(default_factory=dict)

    def record(
        self,
        quantity: str,
        kappa: float,
        c0: float,
        n_div: int,
        value: Optional[float],
    ) -> None:
        if quantity not in QUANTITIES:
            raise ValueError(f"Invalid quantity {quantity}")
        if n_div not in self.levels:
            raise ValueError(f"Level {n_div} is not part of {self.levels}")
        if value is not None and not value >= 0:
            raise ValueError(f"Relative errors are nonnegative, got {value}")
        key = (quantity, float(kappa), float(c0))
        row = self.rows.setdefault(key, [None] * len(self.levels))
        row[self.levels.index(n_div)] = value

    def sorted_keys(self) -> List[RowKey]:
        return sorted(
            self.rows,
            key=lambda key: (QUANTITIES.index(key[0]), -key[1], -key[2]),
        )

    def row_rate(self, key: RowKey) -> Optional[float]:
        row = self.rows[key]
        if len(row) < 2 or row[-2] is None or row[-1] is None:
            return None
        if row[-2] <= 0 or row[-1] <= 0:
            return None
        return rate(row[-2], row[-1])

    def column_names(self) -> List[str]:
        return [f"1/{n_div}" for n_div in self.levels]

    def to_frame(self) -> pd.DataFrame:
        """Numeric frame, one row per (quantity, kappa, c0)."""
        columns = ["quantity", "kappa", "c0"] + self.column_names() + ["rate"]
        records = []
        for key in self.sorted_keys():
            values = [np.nan if v is None else v for v in self.rows[key]]
            row_rate = self.row_rate(key)
            records.append(
                list(key) + values + [np.nan if row_rate is None else row_rate]
            )
        return pd.DataFrame(records, columns=columns)

    def to_formatted_frame(self) -> pd.DataFrame:
        columns = ["quantity", "kappa", "c0"] + self.column_names() + ["rate"]
        records = []
        for key in self.sorted_keys():
            quantity, kappa, c0 = key
            records.append(
                [quantity, "%g" % kappa, "%g" % c0]
                + [format_value(v) for v in self.rows[key]]
                + [format_rate(self.row_rate(key))]
            )
        return pd.DataFrame(records, columns=columns)

    def to_csv(self, path: str) -> None:
        self.to_formatted_frame().to_csv(path, index=False)

    def to_markdown(self) -> str:
        frame = self.to_formatted_frame()
        header = ["kappa", "c0"] + self.column_names() + ["Rate"]
        lines = [
            f"### {self.pairing}",
            "",
            "| " + " | ".join(header) + " |",
            "|" + "---|" * len(header),
        ]
        for quantity in QUANTITIES:
            block = frame[frame["quantity"] == quantity]
            if len(block) == 0:
                continue
            label = QUANTITY_LABELS[quantity]
            lines.append(f"| **{label}** |" + " |" * (len(header) - 1))
            for _, row in block.iterrows():
                names = ["kappa", "c0"] + self.column_names() + ["rate"]
                cells = [row[name] for name in names]
                lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pairing": self.pairing,
            "levels": list(self.levels),
            "rows": [
                {
                    "quantity": q,
                    "kappa": k,
                    "c0": c,
                    "values": list(self.rows[(q, k, c)]),
                }
                for (q, k, c) in self.sorted_keys()
            ],
        }

    @classmethod
    def from_dict(cls, stored: Dict[str, Any]) -> ErrorTable:
        table = cls(stored["pairing"], [int(n) for n in stored["levels"]])
        for row in stored["rows"]:
            key = (row["quantity"], float(row["kappa"]), float(row["c0"]))
            table.rows[key] = [
                None if v is None else float(v) for v in row["values"]
            ]
        return table
