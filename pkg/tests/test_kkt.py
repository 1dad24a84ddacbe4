"""Tests for the saddle-point solvers: direct oracle, PPCG, and diagnostics."""

import io

import numpy as np
import pytest
import scipy.sparse as sp

from falsify.hessian import HessianApprox, init_identity
from falsify.kkt import (
    Breakdown,
    PreconditionerSingular,
    RankDeficient,
    SaddleSystem,
    SingularSystem,
    condition_report,
    dump_system,
    nullspace_basis,
    solve_direct,
    solve_ppcg,
)


def full_hessian(mat):
    dim = mat.shape[0]
    return HessianApprox("full", dim - 1, 1, np.asarray(mat, dtype=float))


def random_spd_system(rng, m1, m2):
    a = rng.standard_normal((m1, m1))
    hess = full_hessian(a @ a.T + m1 * np.eye(m1))
    jac = sp.csc_matrix(rng.standard_normal((m1, m2)))
    return SaddleSystem(hess, jac, rng.standard_normal(m1), rng.standard_normal(m2))


def test_hand_example():
    """H = I, a single constraint on the first coordinate, zero rhs_bottom:
    the step must move only along the free coordinate and the multiplier
    must absorb the constrained component of the gradient."""
    system = SaddleSystem(
        full_hessian(np.eye(2)),
        sp.csc_matrix(np.array([[1.0], [0.0]])),
        np.array([1.0, 1.0]),
        np.array([0.0]),
    )
    for solve in (solve_direct, solve_ppcg):
        sol = solve(system)
        np.testing.assert_allclose(sol.d_x, [0.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(sol.d_lambda, [1.0], atol=1e-14)
        assert sol.residual_norm < 1e-12


def test_ppcg_matches_direct_on_random_systems():
    rng = np.random.default_rng(211)
    for m1, m2 in ((8, 3), (12, 5), (20, 8), (15, 1)):
        system = random_spd_system(rng, m1, m2)
        direct = solve_direct(system)
        iterative = solve_ppcg(system)
        scale = np.linalg.norm(direct.d_x)
        assert np.linalg.norm(iterative.d_x - direct.d_x) / scale < 1e-9
        assert (
            np.linalg.norm(iterative.d_lambda - direct.d_lambda)
            / max(1.0, np.linalg.norm(direct.d_lambda))
            < 1e-9
        )


def test_ppcg_iterates_stay_on_the_constraint_manifold():
    """Every recorded iterate satisfies the bottom block to round-off."""
    rng = np.random.default_rng(223)
    system = random_spd_system(rng, 18, 6)
    sol = solve_ppcg(system)
    assert sol.cg_iterations >= 1
    assert len(sol.constraint_residuals) == sol.cg_iterations
    scale = 1.0 + np.linalg.norm(system.rhs_bottom)
    assert max(sol.constraint_residuals) <= 1e-12 * scale


def test_unconstrained_identity_converges_in_one_iteration():
    rng = np.random.default_rng(227)
    system = SaddleSystem(
        init_identity("full", 3, 4), None, rng.standard_normal(16), np.zeros(0)
    )
    sol = solve_ppcg(system)
    assert sol.cg_iterations == 1
    np.testing.assert_allclose(sol.d_x, system.rhs_top, rtol=1e-14)
    assert sol.d_lambda.shape == (0,)


def test_unconstrained_plain_cg_matches_direct():
    rng = np.random.default_rng(229)
    a = rng.standard_normal((10, 10))
    hess = full_hessian(a @ a.T + 10 * np.eye(10))
    system = SaddleSystem(hess, None, rng.standard_normal(10), np.zeros(0))
    direct = solve_direct(system)
    iterative = solve_ppcg(system)
    np.testing.assert_allclose(iterative.d_x, direct.d_x, rtol=1e-8)


def test_breakdown_on_indefinite_reduced_hessian():
    system = SaddleSystem(
        full_hessian(np.diag([1.0, -1.0])),
        sp.csc_matrix(np.array([[1.0], [0.0]])),
        np.array([0.0, 1.0]),
        np.array([0.0]),
    )
    with pytest.raises(Breakdown):
        solve_ppcg(system)
    # the same system is still solvable by the symmetric-indefinite oracle
    sol = solve_direct(system)
    np.testing.assert_allclose(sol.d_x, [0.0, -1.0], atol=1e-14)


def test_singular_direct_solve_raises():
    # duplicated constraint -> singular saddle matrix
    jac = sp.csc_matrix(np.array([[1.0, 1.0], [0.0, 0.0]]))
    system = SaddleSystem(
        full_hessian(np.eye(2)), jac, np.ones(2), np.zeros(2)
    )
    with pytest.raises(SingularSystem):
        solve_direct(system)
    with pytest.raises(PreconditionerSingular):
        solve_ppcg(system)


def test_max_iter_caps_work():
    rng = np.random.default_rng(233)
    system = random_spd_system(rng, 30, 4)
    sol = solve_ppcg(system, max_iter=2)
    assert sol.cg_iterations == 2


def test_nullspace_basis_properties():
    rng = np.random.default_rng(239)
    jac = sp.csc_matrix(rng.standard_normal((12, 4)))
    basis = nullspace_basis(jac)
    assert basis.shape == (12, 8)
    np.testing.assert_allclose(basis.T @ basis, np.eye(8), atol=1e-12)
    assert np.abs(jac.toarray().T @ basis).max() < 1e-12


def test_nullspace_basis_detects_rank_deficiency():
    column = np.arange(1.0, 7.0)
    jac = sp.csc_matrix(np.column_stack([column, 2.0 * column]))
    with pytest.raises(RankDeficient):
        nullspace_basis(jac)


def test_condition_report_on_identity():
    hess = init_identity("full", 2, 2)
    jac = sp.csc_matrix(np.vstack([np.eye(2), np.zeros((4, 2))]))
    cond_h, cond_reduced, cond_gram = condition_report(hess, jac)
    assert cond_h == pytest.approx(1.0)
    assert cond_reduced == pytest.approx(1.0)
    assert cond_gram == pytest.approx(1.0)


def test_dump_round_trips_every_entry(tmp_path):
    rng = np.random.default_rng(241)
    system = random_spd_system(rng, 6, 2)
    path = tmp_path / "system.txt"
    dump_system(system, path)
    sections = {"hessian": {}, "jacobian": {}, "rhs_top": {}, "rhs_bottom": {}}
    current = None
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            current = line[1:].strip()
            continue
        row, col, value = line.split()
        sections[current][(int(row), int(col))] = float(value)
    dense_h = system.hess.dense_copy()
    for (i, j), value in sections["hessian"].items():
        assert value == dense_h[i, j]  # 17 significant digits round-trip exactly
    dense_b = system.jac.toarray()
    for (i, j), value in sections["jacobian"].items():
        assert value == dense_b[i, j]
    assert len(sections["jacobian"]) == np.count_nonzero(dense_b)
    for (i, _), value in sections["rhs_top"].items():
        assert value == system.rhs_top[i]
    for (i, _), value in sections["rhs_bottom"].items():
        assert value == system.rhs_bottom[i]


def test_saddle_system_validation():
    with pytest.raises(ValueError):
        SaddleSystem(init_identity("full", 2, 2), None, np.zeros(5), np.zeros(0))
    with pytest.raises(ValueError):
        SaddleSystem(
            init_identity("full", 2, 2),
            sp.csc_matrix(np.zeros((6, 3))),
            np.zeros(6),
            np.zeros(2),
        )


def test_residual_definition():
    rng = np.random.default_rng(251)
    system = random_spd_system(rng, 5, 2)
    d_x = rng.standard_normal(5)
    d_lam = rng.standard_normal(2)
    top = system.hess.dense_copy() @ d_x + system.jac.toarray() @ d_lam - system.rhs_top
    bottom = system.jac.toarray().T @ d_x - system.rhs_bottom
    expected = np.sqrt(np.sum(top**2) + np.sum(bottom**2))
    assert system.residual(d_x, d_lam) == pytest.approx(expected, rel=1e-14)
