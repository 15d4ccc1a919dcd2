import math

import pytest
import numpy as np
import pandas as pd

from stokes_biot.diagnostics import (
    composite_infsup,
    containment_residual,
    darcy_brezzi,
    run_diagnostics,
    stokes_constant,
    stokes_infsup,
)
from stokes_biot.mesh import build_unit_square
from stokes_biot.space import build_space

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def test_containment(mesh2, mesh4):
    for mesh in (mesh2, mesh4):
        Q = build_space("DG0", mesh)
        assert containment_residual(build_space("RT0", mesh), Q) < 1e-12
        assert containment_residual(build_space("P1v", mesh), Q) < 1e-12
    P2 = build_space("P2v", mesh4, "none")
    assert containment_residual(P2, build_space("DG0", mesh4)) > 0.1


def test_containment_errors(mesh2, mesh4):
    with pytest.raises(ValueError):
        containment_residual(build_space("RT0", mesh2), build_space("P3s", mesh2))
    with pytest.raises(ValueError):
        containment_residual(build_space("RT0", mesh2), build_space("DG0", mesh4))


def test_stokes_infsup_is_mesh_independent():
    constants = stokes_infsup("P2v", "DG0", levels=(4, 8, 16))
    assert min(constants) > 0.05
    assert min(constants) / max(constants) >= 0.8


def test_stokes_infsup_of_unstable_pair(mesh4):
    U = build_space("P1v", mesh4, "dirichlet")
    assert stokes_constant(U, build_space("DG0", mesh4)) < 1e-6


def test_darcy_raviart_thomas(mesh4):
    W = build_space("RT0", mesh4)
    Q = build_space("DG0", mesh4)
    constants = darcy_brezzi(W, Q)
    assert constants.beta > 0.1
    assert constants.kernel_dim == 0
    assert constants.continuity_b <= 1.0 + 1e-10
    assert constants.alpha_kernel > 0.1


def test_darcy_continuity_degenerates_with_kappa(mesh4):
    W = build_space("RT0", mesh4)
    Q = build_space("DG0", mesh4)
    coarse = darcy_brezzi(W, Q, "standard", kappa=1.0)
    fine = darcy_brezzi(W, Q, "standard", kappa=1e-4)
    assert fine.continuity_c / coarse.continuity_c >= 1e3


def test_darcy_weighted_pairing_is_robust(mesh4):
    W = build_space("RT0", mesh4)
    Q = build_space("DG0", mesh4)
    betas = [
        darcy_brezzi(W, Q, "B", kappa=kappa).beta for kappa in (1.0, 1e-4, 1e-8)
    ]
    assert max(betas) / min(betas) < 1.01


def test_darcy_unstable_pair(mesh4):
    constants = darcy_brezzi(build_space("P1v", mesh4), build_space("DG0", mesh4))
    assert constants.beta < 1e-6
    assert constants.kernel_dim > 0


def test_darcy_errors(mesh2):
    W = build_space("RT0", mesh2)
    Q = build_space("DG0", mesh2)
    with pytest.raises(ValueError):
        darcy_brezzi(W, Q, "C")
    with pytest.raises(ValueError):
        darcy_brezzi(W, Q, "D")
    with pytest.raises(ValueError):
        darcy_brezzi(W, Q, kappa=0.0)


def test_translation_invariance(mesh4):
    moved = mesh4.translated((0.3, -0.2))
    original = darcy_brezzi(build_space("RT0", mesh4), build_space("DG0", mesh4))
    shifted = darcy_brezzi(build_space("RT0", moved), build_space("DG0", moved))
    for a, b in zip(original[:4], shifted[:4]):
        assert abs(a - b) <= 1e-8 * abs(a)
    assert original.kernel_dim == shifted.kernel_dim


def test_composite_infsup_is_bounded_below_in_kappa(mesh4):
    gammas = {
        kappa: composite_infsup("p2-rt0-dg0", mesh4, kappa, 0.0)
        for kappa in (1.0, 1e-4, 1e-8)
    }
    assert min(gammas.values()) > 0.1
    assert gammas[1.0] >= gammas[1e-4]
    assert gammas[1e-4] / gammas[1e-8] <= 1.1


def test_composite_infsup_plateau_in_small_kappa(mesh4):
    for pairing in ("p2-rt0-dg0", "p2-p1-dg0"):
        gammas = [
            composite_infsup(pairing, mesh4, kappa, 0.0)
            for kappa in (1e-4, 1e-6, 1e-8)
        ]
        assert min(gammas) > 0.1
        assert max(gammas) / min(gammas) <= 2.0
    assert composite_infsup("p2-p1-dg0", mesh4, 1.0, 0.0) > 0


def test_composite_infsup_grows_with_storage(mesh4):
    for pairing in ("p2-rt0-dg0", "p2-p1-dg0"):
        gammas = [
            composite_infsup(pairing, mesh4, 1e-4, c0) for c0 in (0.0, 1e-6, 1.0)
        ]
        assert gammas[0] > 0.1
        assert gammas[1] >= gammas[0] * (1 - 1e-8)
        assert gammas[2] >= gammas[0] * (1 - 1e-8)


def test_composite_infsup_clamped_flux(mesh4):
    normal = composite_infsup("p2-rt0-dg0", mesh4, 1e-4, 0.0)
    clamped = composite_infsup(
        "p2-rt0-dg0", mesh4, 1e-4, 0.0, flux_boundary="clamped"
    )
    assert abs(normal - clamped) <= 1e-12 * normal
    assert composite_infsup(
        "p2-p1-dg0", mesh4, 1e-4, 0.0, flux_boundary="clamped"
    ) > 0.1


def test_composite_infsup_other_cases(mesh2):
    assert composite_infsup("p2-p1-dg0", mesh2, 1.0, 0.0) > 0
    assert composite_infsup("p2-rt0-dg0", mesh2, 1.0, 1.0) > 0
    with pytest.raises(ValueError):
        composite_infsup("p2-rt0-dg0", build_unit_square(16), 1.0, 0.0)
    with pytest.raises(ValueError):
        composite_infsup("p1-rt0-dg0", mesh2, 1.0, 0.0)


def test_run_diagnostics(tmp_path):
    report = run_diagnostics(["p2-rt0-dg0", "p2-p1-dg0"], [2], [1.0])
    assert len(report.records) == 2

    frame = report.to_frame()
    assert list(frame["pairing"]) == ["p2-rt0-dg0", "p2-p1-dg0"]
    assert "beta_B" in frame.columns
    assert "kernel_dim_standard" in frame.columns
    assert all(frame["gamma"] > 0)
    assert not math.isnan(frame["alpha_kernel_standard"][0])

    path = str(tmp_path / "diagnostics.csv")
    report.to_csv(path)
    stored = pd.read_csv(path, dtype=str)
    assert len(stored) == 2
    assert stored["kappa"][0] == "1"
    markdown = report.to_markdown()
    assert markdown.count("\n") == 4


def test_run_diagnostics_over_storage(tmp_path):
    report = run_diagnostics(
        ["p2-rt0-dg0"], [2], [1e-4], c0s=[0.0, 1e-6, 1.0], flux_boundary="clamped"
    )
    assert len(report.records) == 3

    frame = report.to_frame()
    assert list(frame["c0"]) == [0.0, 1e-6, 1.0]
    assert all(frame["gamma"] > 0)
    assert frame["beta_B"].nunique() == 1

    path = str(tmp_path / "diagnostics.csv")
    report.to_csv(path)
    stored = pd.read_csv(path, dtype=str)
    assert list(stored["c0"]) == ["0", "1e-06", "1"]
