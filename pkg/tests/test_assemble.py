import pytest
import numpy as np

from stokes_biot.assemble import (
    assemble_biot_step,
    assemble_form,
    assemble_functional,
    assemble_load,
    export_coo,
)
from stokes_biot.problem import ProblemParams, ZeroProblem
from stokes_biot.space import build_space, interpolate

from test_utils import *  # noqa: F401; pylint: disable=unused-variable


def test_mass_integrates_area(mesh4):
    space = build_space("P3s", mesh4)
    mass = assemble_form("mass", space, space, degree=6)
    ones = np.ones(space.dof_count)
    assert abs(ones @ mass @ ones - 1.0) < 1e-12


def test_h1_of_constant_vectors(mesh4):
    space = build_space("P2v", mesh4, "none")
    gram = assemble_form("h1", space, space)
    ones = np.ones(space.dof_count)
    assert abs(ones @ gram @ ones - 2.0) < 1e-12


def test_flux_divergence_entries(mesh4):
    W = build_space("RT0", mesh4)
    Q = build_space("DG0", mesh4)
    B_z = assemble_form("b_wq", W, Q)
    assert B_z.shape == (32, 56)
    assert np.allclose(np.abs(B_z.data), 1.0)
    assert np.all(np.diff(B_z.indptr) == 3)

    z = interpolate(lambda x: np.stack([x[:, 0], 0 * x[:, 0]], axis=1), W)
    assert np.allclose(B_z @ z.coefficients, mesh4.cell_areas())


def test_elasticity_form(mesh4):
    U = build_space("P2v", mesh4, "none")
    A = assemble_form("a", U, U, ProblemParams())
    assert abs(A - A.T).max() < 1e-12

    rigid_motions = [
        lambda x: np.stack([np.ones(len(x)), np.zeros(len(x))], axis=1),
        lambda x: np.stack([np.zeros(len(x)), np.ones(len(x))], axis=1),
        lambda x: np.stack([-x[:, 1], x[:, 0]], axis=1),
    ]
    for motion in rigid_motions:
        coefficients = interpolate(motion, U).coefficients
        assert np.abs(A @ coefficients).max() < 1e-12

    # (x^2, 0) has strain 2x e_11 and divergence 2x: (2 + 1) * 4 / 3.
    stretch = interpolate(
        lambda x: np.stack([x[:, 0] ** 2, np.zeros(len(x))], axis=1), U
    ).coefficients
    assert abs(stretch @ A @ stretch - 4.0) < 1e-12

    unit_shear = ProblemParams(shear_factor=1.0)
    A1 = assemble_form("a", U, U, unit_shear)
    assert abs(stretch @ A1 @ stretch - 8.0 / 3.0) < 1e-12


def test_flux_forms_scale_with_parameters(mesh2):
    W = build_space("RT0", mesh2)
    Q = build_space("DG0", mesh2)
    C1 = assemble_form("c", W, W, ProblemParams(kappa=1.0))
    C4 = assemble_form("c", W, W, ProblemParams(kappa=1e-4))
    assert np.allclose(C4.toarray(), 1e4 * C1.toarray())

    D = assemble_form("d", Q, Q, ProblemParams(c0=0.5))
    assert np.allclose(D.diagonal(), 0.5 * mesh2.cell_areas())
    assert assemble_form("d", Q, Q, ProblemParams(c0=0.0)).nnz == 0


def test_functional(mesh2):
    Q = build_space("DG0", mesh2)
    load = assemble_functional(lambda x: np.ones(len(x)), Q)
    assert np.allclose(load, mesh2.cell_areas())


def test_step_system(mesh2, params):
    system = assemble_biot_step("p2-rt0-dg0", mesh2, params)
    assert system.block_sizes == (50, 16, 8, 1)
    assert system.dimension == 75
    assert system.matrix.shape == (75, 75)
    assert abs(system.matrix - system.matrix.T).max() < 1e-12

    dense = system.matrix.toarray()
    for dof in system.constrained_dofs:
        expected = np.zeros(75)
        expected[dof] = 1.0
        assert np.array_equal(dense[dof], expected)
        assert np.array_equal(dense[:, dof], expected)

    inertia = system.factorization().inertia()
    assert inertia == (50 + 16 + 1, 8, 0)


def test_step_system_with_storage(mesh2):
    params = ProblemParams(kappa=1e-8, c0=1e-6)
    for pairing in ("p2-rt0-dg0", "p2-p1-dg0"):
        system = assemble_biot_step(pairing, mesh2, params)
        n_u, n_w, n_q, _ = system.block_sizes
        assert system.factorization().inertia() == (n_u + n_w + 1, n_q, 0)


def test_clamped_flux_boundary(mesh4, params):
    normal = assemble_biot_step("p2-p1-dg0", mesh4, params)
    clamped = assemble_biot_step(
        "p2-p1-dg0", mesh4, params, flux_boundary="clamped"
    )
    assert len(normal.flux_space.constrained_dofs) == 20
    assert len(clamped.flux_space.constrained_dofs) == 32
    assert clamped.flux_space.boundary == "dirichlet"
    n_u, n_w, n_q, _ = clamped.block_sizes
    assert clamped.factorization().inertia() == (n_u + n_w + 1, n_q, 0)

    rt0 = assemble_biot_step("p2-rt0-dg0", mesh4, params, flux_boundary="clamped")
    assert rt0.flux_space.boundary == "normal"
    assert len(rt0.flux_space.constrained_dofs) == 16

    with pytest.raises(ValueError):
        assemble_biot_step("p2-p1-dg0", mesh4, params, flux_boundary="free")


def test_step_without_mean_constraint(mesh2):
    system = assemble_biot_step(
        "p2-rt0-dg0", mesh2, ProblemParams(c0=1.0), use_mean_constraint=False
    )
    assert system.dimension == 74
    u, z, p, multiplier = system.split(np.arange(74.0))
    assert len(u) == 50 and len(z) == 16 and len(p) == 8
    assert multiplier == 0.0


def test_reconstruct(mesh2, params):
    system = assemble_biot_step("p2-rt0-dg0", mesh2, params)
    rebuilt = system.factorization().reconstruct()
    assert abs(rebuilt - system.matrix).max() < 1e-10 * abs(system.matrix).max()


def test_zero_load(mesh2, params):
    system = assemble_biot_step("p2-p1-dg0", mesh2, params)
    rhs = assemble_load(system, ZeroProblem(params), 1.0)
    assert rhs.shape == (system.dimension,)
    assert np.all(rhs == 0)


def test_invalid_forms(mesh2):
    U = build_space("P2v", mesh2)
    W = build_space("RT0", mesh2)
    Q = build_space("DG0", mesh2)
    with pytest.raises(ValueError):
        assemble_form("e", U, U)
    with pytest.raises(ValueError):
        assemble_form("a", W, W)
    with pytest.raises(ValueError):
        assemble_form("b_wq", Q, W)
    with pytest.raises(ValueError):
        assemble_form("mass", U, Q)
    with pytest.raises(ValueError):
        assemble_biot_step("p1-p1-dg0", mesh2, ProblemParams())


def test_export_coo(mesh2, tmp_path):
    Q = build_space("DG0", mesh2)
    path = str(tmp_path / "mass.txt")
    export_coo(assemble_form("mass", Q, Q), path)
    with open(path) as file:
        lines = file.read().splitlines()
    assert len(lines) == 8
    i, j, value = lines[0].split()
    assert i == j == "0"
    assert abs(float(value) - 0.125) < 1e-15
