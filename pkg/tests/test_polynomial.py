"""Polynomial approximate-inverse tests.

The coefficient form is checked against a self-contained dense GMRES oracle
(modified Gram-Schmidt Arnoldi plus a least-squares solve, residual measured
explicitly), the Newton form against dense eigenvalues and against the
coefficient form, and the assembled form against dense masked-power oracles.
"""

import numpy as np
import pytest

from airmg import (SparseMatrix, apply_matrix_free, assemble_fixed_sparsity,
                   build_advection_1d, build_advection_2d, AdvectionProblem,
                   cf_split, extract, gmres_poly_arnoldi, gmres_poly_newton,
                   neumann_poly, spmv)
from airmg.polynomial import _random_unit_vector, export_diagnostics


def dense_gmres_residual(A_dense, b, m):
    """Textbook GMRES residual at step ``m``: build the Krylov basis densely,
    solve the small least-squares problem, and measure ||b - A x|| directly."""
    n = len(b)
    beta = np.linalg.norm(b)
    Q = [b / beta]
    h = np.zeros((m + 1, m))
    steps = 0
    for j in range(m):
        w = A_dense @ Q[j]
        for i in range(j + 1):
            h[i, j] = Q[i] @ w
            w = w - h[i, j] * Q[i]
        h[j + 1, j] = np.linalg.norm(w)
        steps = j + 1
        if h[j + 1, j] < 1e-13 * beta:
            break
        Q.append(w / h[j + 1, j])
    rhs = np.zeros(steps + 1)
    rhs[0] = beta
    y, *_ = np.linalg.lstsq(h[:steps + 1, :steps], rhs, rcond=None)
    x = np.column_stack(Q[:steps]) @ y
    return np.linalg.norm(b - A_dense @ x)


def random_dd_matrix(rng, n, density=0.3):
    """Random strictly diagonally dominant sparse matrix."""
    dense = np.where(rng.random((n, n)) < density,
                     rng.uniform(-1, 1, (n, n)), 0.0)
    np.fill_diagonal(dense, 0.0)
    rowsum = np.abs(dense).sum(axis=1)
    np.fill_diagonal(dense, rowsum + rng.uniform(0.5, 1.5, n))
    return SparseMatrix.from_dense(dense)


def generating_residual(p, A, seed):
    b = _random_unit_vector(A.nrows, seed)
    x = apply_matrix_free(p, A, b)
    return np.linalg.norm(b - spmv(A, x))


def test_arnoldi_scaled_identity_exact():
    A = SparseMatrix.from_dense(2.0 * np.eye(5))
    p = gmres_poly_arnoldi(A, order=3, seed=0)
    assert p.effective_order == 0
    assert p.coeffs[0] == pytest.approx(0.5, rel=1e-14)
    b = np.arange(1.0, 6.0)
    assert np.allclose(apply_matrix_free(p, A, b), b / 2.0, rtol=1e-14)


def test_arnoldi_two_point_spectrum_coefficients():
    # exact inverse of diag(1, 2) needs q(t) = 1.5 - 0.5 t
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0]))
    p = gmres_poly_arnoldi(A, order=1, seed=3)
    assert p.coeffs == pytest.approx([1.5, -0.5], rel=1e-12)


def test_arnoldi_zero_matrix_error():
    A = SparseMatrix.from_coo(3, 3, [0], [0], [0.0])
    with pytest.raises(ValueError):
        gmres_poly_arnoldi(A, order=2, seed=0)


def test_arnoldi_residual_matches_textbook_gmres():
    rng = np.random.default_rng(31)
    for trial in range(6):
        n = int(rng.integers(10, 40))
        A = random_dd_matrix(rng, n)
        for order in (1, 3, 5):
            seed = 100 * trial + order
            p = gmres_poly_arnoldi(A, order=order, seed=seed)
            if p.effective_order < order:
                continue  # polynomial already exact; oracle step differs
            b = _random_unit_vector(n, seed)
            got = generating_residual(p, A, seed)
            want = dense_gmres_residual(A.to_dense(), b, order + 1)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-13)


def test_arnoldi_residual_non_increasing_in_order():
    rng = np.random.default_rng(32)
    A = random_dd_matrix(rng, 30)
    seed = 7
    residuals = [generating_residual(gmres_poly_arnoldi(A, k, seed), A, seed)
                 for k in range(6)]
    for lo, hi in zip(residuals[1:], residuals[:-1]):
        assert lo <= hi + 1e-12


def test_arnoldi_truncates_near_identity_stagnation():
    # near scaled identity: tiny couplings stall the Krylov space; the
    # extracted polynomial must stay accurate instead of blowing up
    dense = 1.4142 * np.eye(12)
    dense[3, 1] = -0.04
    dense[7, 2] = -0.002
    A = SparseMatrix.from_dense(dense)
    p = gmres_poly_arnoldi(A, order=6, seed=1)
    v = _random_unit_vector(12, 9)
    err = v - apply_matrix_free(p, A, spmv(A, v))
    assert np.linalg.norm(err) < 1e-8


def test_newton_scaled_identity_single_root():
    A = SparseMatrix.from_dense(3.0 * np.eye(6))
    p = gmres_poly_newton(A, order=4, seed=0)
    assert p.effective_order == 0
    assert len(p.roots) == 1
    assert p.roots[0] == pytest.approx(3.0, rel=1e-13)
    b = np.linspace(1, 2, 6)
    assert np.allclose(apply_matrix_free(p, A, b), b / 3.0, rtol=1e-13)


def test_newton_full_krylov_recovers_eigenvalues():
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
    p = gmres_poly_newton(A, order=3, seed=5)
    got = np.sort(p.roots.real)
    assert np.max(np.abs(p.roots.imag)) < 1e-12
    assert got == pytest.approx([1.0, 2.0, 3.0], rel=1e-12)


def test_newton_matches_arnoldi_coefficient_form():
    rng = np.random.default_rng(33)
    A = random_dd_matrix(rng, 50, density=0.2)
    seed = 17
    order = 10
    pa = gmres_poly_arnoldi(A, order=order, seed=seed)
    pn = gmres_poly_newton(A, order=order, seed=seed)
    b = _random_unit_vector(50, 999)
    ra = np.linalg.norm(b - spmv(A, apply_matrix_free(pa, A, b)))
    rn = np.linalg.norm(b - spmv(A, apply_matrix_free(pn, A, b)))
    assert rn == pytest.approx(ra, rel=1e-8)


def test_newton_conjugate_pairs_adjacent():
    # rotation-like block gives complex harmonic Ritz values
    dense = np.array([[2.0, -1.0, 0.0, 0.0],
                      [1.0, 2.0, 0.0, 0.0],
                      [0.0, 0.0, 3.0, -0.5],
                      [0.0, 0.0, 0.5, 3.0]])
    A = SparseMatrix.from_dense(dense)
    p = gmres_poly_newton(A, order=4, seed=2)
    roots = p.roots
    i = 0
    while i < len(roots):
        if roots[i].imag != 0:
            assert roots[i + 1] == np.conj(roots[i])
            i += 2
        else:
            i += 1


def test_newton_high_order_finite_on_wide_spectrum():
    rng = np.random.default_rng(34)
    A = SparseMatrix.from_dense(np.diag(np.geomspace(1e-4, 1e4, 120)))
    p = gmres_poly_newton(A, order=100, seed=4)
    b = rng.uniform(-1, 1, 120)
    x = apply_matrix_free(p, A, b)
    assert np.all(np.isfinite(x))


def test_newton_order_100_on_dd_matrix_finite_and_accurate():
    rng = np.random.default_rng(35)
    A = random_dd_matrix(rng, 300, density=0.05)
    p = gmres_poly_newton(A, order=100, seed=6)
    b = _random_unit_vector(300, 777)
    x = apply_matrix_free(p, A, b)
    assert np.all(np.isfinite(x))
    assert np.linalg.norm(b - spmv(A, x)) < 1e-8


def test_neumann_diagonal_exact():
    A = SparseMatrix.from_dense(np.diag([2.0, 4.0, 8.0]))
    p = neumann_poly(A, order=5)
    b = np.array([2.0, 4.0, 8.0])
    assert np.allclose(apply_matrix_free(p, A, b), np.ones(3), rtol=1e-15)


def test_neumann_order_zero_is_jacobi():
    A = SparseMatrix.from_dense([[2.0, -1.0], [0.0, 4.0]])
    p = neumann_poly(A, order=0)
    b = np.array([2.0, 8.0])
    assert np.array_equal(apply_matrix_free(p, A, b), [1.0, 2.0])


def test_neumann_exact_for_nilpotent_offdiagonal():
    A = build_advection_1d(4, 1.0)
    p = neumann_poly(A, order=3)
    rng = np.random.default_rng(36)
    b = rng.uniform(-1, 1, 4)
    expected = np.linalg.solve(A.to_dense(), b)
    assert np.allclose(apply_matrix_free(p, A, b), expected, rtol=1e-13)


def test_neumann_zero_diagonal_error():
    A = SparseMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        neumann_poly(A, order=2)


def test_apply_matches_dense_polynomial_oracle():
    rng = np.random.default_rng(37)
    A = random_dd_matrix(rng, 20)
    dense = A.to_dense()
    for order in (0, 2, 5, 10):
        p = gmres_poly_arnoldi(A, order=order, seed=order + 1)
        b = rng.uniform(-1, 1, 20)
        expected = np.zeros(20)
        power = b.copy()
        for c in p.coeffs:
            expected += c * power
            power = dense @ power
        got = apply_matrix_free(p, A, b)
        assert np.linalg.norm(got - expected) <= 1e-12 * np.linalg.norm(expected)


def test_apply_degree_zero_scales():
    from airmg import PolySolver
    p = PolySolver(kind='arnoldi_coeff', order=0, effective_order=0,
                   coeffs=np.array([2.5]))
    A = SparseMatrix.identity(3)
    assert np.array_equal(apply_matrix_free(p, A, np.ones(3)), 2.5 * np.ones(3))


def test_assemble_diagonal_is_exact_inverse():
    A = SparseMatrix.from_dense(np.diag([2.0, 5.0]))
    p = gmres_poly_arnoldi(A, order=1, seed=0)
    assembled = assemble_fixed_sparsity(p, A)
    assert np.allclose(assembled.to_dense(), np.diag([0.5, 0.2]), rtol=1e-14)
    pn = neumann_poly(A, order=4)
    assert np.allclose(assemble_fixed_sparsity(pn, A).to_dense(),
                       np.diag([0.5, 0.2]), rtol=1e-14)


def test_assemble_order_one_matches_matrix_free():
    rng = np.random.default_rng(38)
    A = random_dd_matrix(rng, 15)
    b = rng.uniform(-1, 1, 15)
    for p in (gmres_poly_arnoldi(A, order=1, seed=2), neumann_poly(A, 1)):
        direct = apply_matrix_free(p, A, b)
        via_matrix = spmv(assemble_fixed_sparsity(p, A), b)
        assert np.linalg.norm(direct - via_matrix) <= 1e-14 * np.linalg.norm(direct)


def test_assemble_tridiagonal_masked_oracle():
    n = 8
    dense = (np.diag(np.full(n, 3.0)) + np.diag(np.full(n - 1, -1.0), -1)
             + np.diag(np.full(n - 1, 0.5), 1))
    A = SparseMatrix.from_dense(dense)
    p = gmres_poly_arnoldi(A, order=3, seed=1)
    got = assemble_fixed_sparsity(p, A).to_dense()
    # dense masked-power oracle: every power is confined to the pattern of A
    # plus the diagonal before multiplying again
    pattern = (dense != 0) | np.eye(n, dtype=bool)
    expected = np.zeros((n, n))
    power = np.eye(n)
    for k, c in enumerate(p.coeffs):
        expected += c * power
        power = power @ dense
        power[~pattern] = 0.0
    assert np.max(np.abs(got - expected)) <= 1e-12 * np.max(np.abs(expected))
    got_pattern = assemble_fixed_sparsity(p, A)
    from airmg.sparse import _row_index
    inside = pattern[_row_index(got_pattern), got_pattern.col_indices]
    assert np.all(inside)


def test_assemble_neumann_masked_oracle():
    n = 8
    rng = np.random.default_rng(39)
    A = random_dd_matrix(rng, n, density=0.25)
    dense = A.to_dense()
    order = 4
    p = neumann_poly(A, order=order)
    got = assemble_fixed_sparsity(p, A).to_dense()
    pattern = (dense != 0) | np.eye(n, dtype=bool)
    dinv = 1.0 / np.diag(dense)
    N = np.eye(n) - dinv[:, None] * dense
    expected = np.zeros((n, n))
    power = np.eye(n)
    for k in range(order + 1):
        expected += power
        power = power @ N
        power[~pattern] = 0.0
    expected = expected * dinv[None, :]
    assert np.max(np.abs(got - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_assemble_rejects_newton():
    A = SparseMatrix.identity(4)
    p = gmres_poly_newton(SparseMatrix.from_dense(np.diag([1.0, 2.0, 3.0, 4.0])),
                          order=2, seed=0)
    with pytest.raises(ValueError):
        assemble_fixed_sparsity(p, A)


def test_f_block_polynomial_residual_matches_gmres_on_advection():
    vx, vy = np.cos(np.pi / 4), np.sin(np.pi / 4)
    A, _ = build_advection_2d(AdvectionProblem(nx=8, ny=8, vx=vx, vy=vy))
    split, _ = cf_split(A, theta=0.4, ddc_fraction=0.01, ddc_its=1, seed=0)
    A_ff = extract(A, split.f_set, split.f_set)
    seed = 11
    p = gmres_poly_arnoldi(A_ff, order=5, seed=seed)
    if p.effective_order == 5:
        b = _random_unit_vector(A_ff.nrows, seed)
        want = dense_gmres_residual(A_ff.to_dense(), b, 6)
        got = generating_residual(p, A_ff, seed)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-13)


def test_export_diagnostics_schema():
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0]))
    p = gmres_poly_arnoldi(A, order=1, seed=0)
    d = export_diagnostics(p)
    assert d['kind'] == 'arnoldi_coeff'
    assert isinstance(d['coeffs'], list)
    assert d['roots'] is None
    assert len(d['generating_residual_history']) >= 1
