"""Hierarchy construction tests: restriction/prolongation operators, the
Galerkin coarse product, truncation and the full setup loop."""

import logging

import numpy as np
import pytest

from airmg import (AdvectionProblem, CFSplit, F_POINT, C_POINT, SetupConfig,
                   SparseMatrix, apply_matrix_free, build_advection_1d,
                   build_advection_2d, build_prolongation, build_restriction,
                   cf_split, coarse_matrix, extract, hierarchy_summary, setup,
                   spmv, try_truncate, vcycle, SolveConfig)
from airmg.hierarchy import (_SEED_COARSE_POLY, _SEED_TRUNC_RHS, _derive_seed,
                             _repair_split, _resolve_truncate_start)
from airmg.polynomial import _random_unit_vector, gmres_poly_newton


def labels_from_sets(n, c_set):
    labels = np.full(n, F_POINT, dtype=np.int8)
    labels[list(c_set)] = C_POINT
    return CFSplit.from_labels(labels)


def test_restriction_is_ideal_for_diagonal_fine_block():
    # 1-D chain: the fine block of any independent-set split is diagonal, so
    # the assembled polynomial inverse is exact and Z = -A_cf A_ff^{-1}
    A = build_advection_1d(32, 1.5)
    split, _ = cf_split(A, theta=0.5, ddc_fraction=0.01, ddc_its=2, seed=0)
    cfg = SetupConfig(poly_order=2)
    R, A_ff, A_fc, smoother = build_restriction(A, split, cfg)
    assert A_ff.nnz == A_ff.nrows  # diagonal
    A_cf = extract(A, split.c_set, split.f_set)
    Z = R.to_dense()[:, split.f_set]
    ideal = -A_cf.to_dense() @ np.linalg.inv(A_ff.to_dense())
    assert np.max(np.abs(Z - ideal)) <= 1e-13
    # C block of R is the identity
    assert np.array_equal(R.to_dense()[:, split.c_set],
                          np.eye(split.n_c))


def test_restriction_quality_bounded_and_polynomial_improves():
    vx, vy = np.sqrt(2.0 / 3.0), np.sqrt(1.0 / 3.0)
    A, _ = build_advection_2d(AdvectionProblem(nx=16, ny=16, vx=vx, vy=vy))
    split, _ = cf_split(A, theta=0.99, ddc_fraction=0.01, ddc_its=2, seed=0)
    A_ff = extract(A, split.f_set, split.f_set)
    assert A_ff.nnz > A_ff.nrows  # non-diagonal fine block
    A_cf = extract(A, split.c_set, split.f_set)
    dense_ff = A_ff.to_dense()
    inv_ff = np.linalg.inv(dense_ff)
    prev = None
    for order in range(1, 7):
        cfg = SetupConfig(poly_order=order)
        R, _, _, smoother = build_restriction(A, split, cfg)
        Z = R.to_dense()[:, split.f_set]
        rel = (np.linalg.norm(Z @ dense_ff + A_cf.to_dense())
               / np.linalg.norm(A_cf.to_dense()))
        assert rel < 1.0
        # the matrix-free polynomial itself converges to the dense inverse
        qm = np.column_stack([apply_matrix_free(smoother, A_ff, e)
                              for e in np.eye(A_ff.nrows)])
        poly_err = np.linalg.norm(qm - inv_ff)
        if prev is not None:
            assert poly_err <= prev * (1 + 1e-10)
        prev = poly_err


def test_restriction_r_drop_discards_small_entries():
    A = build_advection_1d(24, 1.0)
    split, _ = cf_split(A, theta=0.5, ddc_fraction=0.01, ddc_its=1, seed=3)
    loose = SetupConfig(poly_order=1, r_drop=0.9)
    tight = SetupConfig(poly_order=1, r_drop=0.0)
    R_loose = build_restriction(A, split, loose)[0]
    R_tight = build_restriction(A, split, tight)[0]
    assert R_loose.nnz <= R_tight.nnz
    # row sums changed (discarded, not lumped) unless nothing was dropped
    if R_loose.nnz < R_tight.nnz:
        assert not np.allclose(R_loose.to_dense().sum(axis=1),
                               R_tight.to_dense().sum(axis=1))


def test_prolongation_all_coarse_is_identity():
    A = SparseMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))
    split = labels_from_sets(3, [0, 1, 2])
    P = build_prolongation(A, split)
    assert np.array_equal(P.to_dense(), np.eye(3))


def test_prolongation_picks_strongest_coupling():
    dense = np.array([[2.0, -0.8, -0.3],
                      [0.0, 1.0, 0.0],
                      [0.0, 0.0, 1.0]])
    A = SparseMatrix.from_dense(dense)
    split = labels_from_sets(3, [1, 2])
    P = build_prolongation(A, split)
    # F row 0 interpolates from coarse point 1 (|-0.8| > |-0.3|)
    assert np.array_equal(P.to_dense(),
                          [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_prolongation_tie_takes_lowest_coarse_index():
    v = 0.7071067811865476
    dense = np.array([[2 * v, -v, -v],
                      [0.0, 1.0, 0.0],
                      [0.0, 0.0, 1.0]])
    A = SparseMatrix.from_dense(dense)
    split = labels_from_sets(3, [1, 2])
    P = build_prolongation(A, split)
    assert np.array_equal(P.to_dense(),
                          [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_prolongation_errors_without_coarse_coupling():
    dense = np.array([[1.0, 0.0, 0.0],
                      [0.0, 1.0, -0.5],
                      [0.0, -0.5, 1.0]])
    A = SparseMatrix.from_dense(dense)
    split = labels_from_sets(3, [1, 2])  # F point 0 couples to nothing
    with pytest.raises(ValueError, match='no coupling'):
        build_prolongation(A, split)


def test_prolongation_unit_rows_inside_setup():
    A, _ = build_advection_2d(AdvectionProblem(nx=12, ny=12, vx=0.9, vy=0.1))
    H = setup(A, SetupConfig(auto_truncate_tol=None, min_coarse_size=30))
    for L in H.levels:
        P = L.P.to_dense()
        for j, row_idx in enumerate(L.split.c_set):
            row = P[row_idx]
            assert row[j] == 1.0 and np.count_nonzero(row) == 1
        for row_idx in L.split.f_set:
            row = P[row_idx]
            assert np.count_nonzero(row) == 1
            assert row.max() == 1.0


def test_coarse_matrix_all_coarse_degenerate():
    rng = np.random.default_rng(41)
    dense = np.where(rng.random((5, 5)) < 0.6, rng.uniform(-1, 1, (5, 5)), 0.0)
    np.fill_diagonal(dense, 2.0)
    A = SparseMatrix.from_dense(dense)
    I5 = SparseMatrix.identity(5)
    cfg = SetupConfig(a_drop=0.0, lump=False)
    got = coarse_matrix(A, I5, I5, cfg)
    assert np.array_equal(got.to_dense(), dense)


def test_coarse_matrix_matches_schur_complement():
    A = build_advection_1d(20, 1.0)
    split, _ = cf_split(A, theta=0.5, ddc_fraction=0.01, ddc_its=1, seed=1)
    split = _repair_split(A, split)
    cfg = SetupConfig(poly_order=1, a_drop=0.0, lump=False, r_drop=0.0)
    R, A_ff, A_fc, _ = build_restriction(A, split, cfg)
    P = build_prolongation(A, split)
    got = coarse_matrix(A, R, P, cfg).to_dense()
    f, c = split.f_set, split.c_set
    dense = A.to_dense()
    schur = (dense[np.ix_(c, c)]
             - dense[np.ix_(c, f)] @ np.linalg.inv(dense[np.ix_(f, f)])
             @ dense[np.ix_(f, c)])
    assert np.max(np.abs(got - schur)) <= 1e-12


def test_coarse_matrix_zero_drop_keeps_everything():
    A = build_advection_1d(16, 1.0)
    split, _ = cf_split(A, theta=0.5, ddc_fraction=0.01, ddc_its=1, seed=2)
    split = _repair_split(A, split)
    base = SetupConfig(poly_order=1, a_drop=0.0, lump=False)
    lumped = SetupConfig(poly_order=1, a_drop=0.0, lump=True)
    R, _, _, _ = build_restriction(A, split, base)
    P = build_prolongation(A, split)
    got_a = coarse_matrix(A, R, P, base).to_dense()
    got_b = coarse_matrix(A, R, P, lumped).to_dense()
    assert np.array_equal(got_a, got_b)


def test_try_truncate_identity_succeeds():
    A = SparseMatrix.identity(40)
    cfg = SetupConfig(coarsest_poly_order=4, auto_truncate_tol=0.1,
                      auto_truncate_start_level=0)
    solver = try_truncate(A, cfg, level=0)
    assert solver is not None
    b = np.arange(1.0, 41.0)
    assert np.allclose(apply_matrix_free(solver, A, b), b, rtol=1e-12)


def test_try_truncate_small_spectrum_succeeds():
    A = SparseMatrix.from_dense(np.diag(np.arange(1.0, 6.0)))
    cfg = SetupConfig(coarsest_poly_order=10, auto_truncate_tol=0.1,
                      auto_truncate_start_level=0)
    assert try_truncate(A, cfg, level=0) is not None


def test_try_truncate_threshold_semantics():
    # measure the residual the tentative solver achieves, then bracket it
    A = build_advection_1d(150, 1.0)
    order = 40
    level = 0
    cfg0 = SetupConfig(coarsest_poly_order=order, auto_truncate_tol=0.5,
                       auto_truncate_start_level=0, seed=0)
    solver = gmres_poly_newton(A, order,
                               _derive_seed(0, level, _SEED_COARSE_POLY))
    rhs = _random_unit_vector(A.nrows, _derive_seed(0, level, _SEED_TRUNC_RHS))
    x = apply_matrix_free(solver, A, rhs)
    res = np.linalg.norm(rhs - spmv(A, x)) / np.linalg.norm(rhs)
    assert 1e-12 < res < 0.5  # nontrivial residual for the bracket
    accept = SetupConfig(coarsest_poly_order=order,
                         auto_truncate_tol=res * (1 + 1e-9),
                         auto_truncate_start_level=0, seed=0)
    reject = SetupConfig(coarsest_poly_order=order,
                         auto_truncate_tol=res * (1 - 1e-9),
                         auto_truncate_start_level=0, seed=0)
    assert try_truncate(A, accept, level) is not None
    assert try_truncate(A, reject, level) is None


def test_try_truncate_respects_start_level():
    A = SparseMatrix.identity(10)
    cfg = SetupConfig(auto_truncate_start_level=3, coarsest_poly_order=2)
    assert try_truncate(A, cfg, level=1) is None
    assert try_truncate(A, cfg, level=3) is not None


def test_truncation_rhs_differs_from_coefficient_rhs():
    # the acceptance test vector must be independent of the vector that
    # generated the polynomial coefficients
    s_poly = _derive_seed(0, 5, _SEED_COARSE_POLY)
    s_test = _derive_seed(0, 5, _SEED_TRUNC_RHS)
    assert s_poly != s_test
    a = _random_unit_vector(64, s_poly)
    b = _random_unit_vector(64, s_test)
    assert abs(a @ b) < 0.999


def test_truncate_start_level_estimate():
    cfg = SetupConfig(coarsest_poly_order=100)
    assert _resolve_truncate_start(cfg, 50) == 0
    assert _resolve_truncate_start(cfg, 65536) == int(np.ceil(np.log2(65536 / 101))) + 2
    pinned = SetupConfig(auto_truncate_start_level=7)
    assert _resolve_truncate_start(pinned, 10**6) == 7


def test_setup_diagonal_matrix_single_level():
    A = SparseMatrix.from_dense(np.diag(np.arange(1.0, 41.0)))
    H = setup(A, SetupConfig(min_coarse_size=4, coarsest_poly_order=50))
    assert len(H.levels) == 0
    b = np.ones(40)
    x = apply_matrix_free(H.coarse_solver, H.coarsest_A, b)
    assert np.allclose(spmv(A, x), b, rtol=1e-9)


def test_setup_cyclic_reduction_limit_single_cycle():
    A = build_advection_1d(1024, 1.0)
    H = setup(A, SetupConfig(strong_threshold=0.5, poly_order=1,
                             auto_truncate_tol=None))
    for L in H.levels:
        assert L.A_ff.nnz == L.A_ff.nrows  # diagonal every level
    rng = np.random.default_rng(42)
    b = rng.uniform(-1, 1, 1024)
    e = vcycle(H, 0, b, SolveConfig())
    assert np.linalg.norm(b - spmv(A, e)) <= 1e-12 * np.linalg.norm(b)


def test_setup_level_sizes_strictly_decrease():
    A, _ = build_advection_2d(AdvectionProblem(nx=24, ny=24, vx=0.8, vy=0.6))
    H = setup(A, SetupConfig(auto_truncate_tol=None))
    sizes = [L.n for L in H.levels] + [H.coarsest_A.nrows]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_setup_records_nnz_of_discarded_matrices():
    A, _ = build_advection_2d(AdvectionProblem(nx=16, ny=16, vx=0.7, vy=0.7))
    H = setup(A, SetupConfig(auto_truncate_tol=None))
    assert H.levels[0].nnz_A == A.nnz
    assert all(L.nnz_A > 0 for L in H.levels)


def test_setup_deterministic():
    A, _ = build_advection_2d(AdvectionProblem(nx=32, ny=32,
                                               vx=np.cos(np.pi / 4),
                                               vy=np.sin(np.pi / 4)))
    cfg = SetupConfig(seed=5)
    s1 = hierarchy_summary(setup(A, cfg))
    s2 = hierarchy_summary(setup(A, cfg))
    assert s1 == s2


def test_setup_storage_complexity_recomputable_from_summary():
    A, _ = build_advection_2d(AdvectionProblem(nx=24, ny=24, vx=0.9, vy=0.3))
    for mf in (True, False):
        H = setup(A, SetupConfig(matrix_free_polys=mf))
        s = hierarchy_summary(H)
        retained = sum(l['nnz_A_ff'] + l['nnz_A_fc'] + l['nnz_R'] + l['nnz_P']
                       + (l['nnz_smoother_assembled'] or 0)
                       for l in s['levels'])
        expected = (retained + s['nnz_top'] + s['coarsest']['nnz']) / s['nnz_top']
        assert s['storage_complexity'] == expected
        assert s['storage_complexity'] >= 1.0
        assert s['cycle_complexity'] >= 1.0


def test_setup_assembled_smoother_mode():
    A, _ = build_advection_2d(AdvectionProblem(nx=16, ny=16,
                                               vx=np.cos(np.pi / 4),
                                               vy=np.sin(np.pi / 4)))
    H = setup(A, SetupConfig(matrix_free_polys=False))
    assert any(L.f_smoother_assembled is not None for L in H.levels)
    from airmg import richardson_solve
    x, stats = richardson_solve(H, np.zeros(A.nrows), np.ones(A.nrows),
                                SolveConfig(max_iters=40))
    assert stats.converged


def test_setup_grid_complexity_ordering_with_threshold():
    vx, vy = np.cos(np.pi / 4), np.sin(np.pi / 4)
    A, _ = build_advection_2d(AdvectionProblem(nx=64, ny=64, vx=vx, vy=vy))
    slow = setup(A, SetupConfig(strong_threshold=0.4, auto_truncate_tol=None))
    fast = setup(A, SetupConfig(strong_threshold=0.99, auto_truncate_tol=None))
    assert slow.grid_complexity > fast.grid_complexity


def test_setup_stagnation_error():
    # two strongly tied pairs: DDC with a huge fraction converts every F
    # point (all dominance ratios equal), leaving no F points to reduce
    dense = np.array([[1.0, -1.0, 0.0, 0.0],
                      [-1.0, 1.0, 0.0, 0.0],
                      [0.0, 0.0, 1.0, -1.0],
                      [0.0, 0.0, -1.0, 1.0]])
    A = SparseMatrix.from_dense(dense)
    cfg = SetupConfig(strong_threshold=0.5, ddc_fraction=0.9, ddc_its=1,
                      min_coarse_size=1, auto_truncate_tol=None,
                      coarsest_poly_order=3)
    with pytest.raises(ValueError, match='no F points'):
        setup(A, cfg)


def test_setup_max_levels_warning(caplog):
    A, _ = build_advection_2d(AdvectionProblem(nx=24, ny=24, vx=0.6, vy=0.8))
    with caplog.at_level(logging.WARNING, logger='airmg.hierarchy'):
        H = setup(A, SetupConfig(max_levels=2, auto_truncate_tol=None,
                                 coarsest_poly_order=60))
    assert len(H.levels) == 2
    assert any('budget' in rec.message for rec in caplog.records)


def test_setup_config_rejects_unimplemented_variants():
    with pytest.raises(ValueError, match='smoothing'):
        SetupConfig(smooth_type='fcf').validate()
    with pytest.raises(ValueError, match='prolong'):
        SetupConfig(one_point_classical_prolong=False).validate()
    with pytest.raises(ValueError, match='improve'):
        SetupConfig(improve_z_its=1).validate()
    with pytest.raises(ValueError, match='sparsity'):
        SetupConfig(inverse_sparsity_order=2).validate()


def test_setup_config_validation_bounds():
    with pytest.raises(ValueError):
        SetupConfig(strong_threshold=1.2).validate()
    with pytest.raises(ValueError):
        SetupConfig(ddc_fraction=0.0).validate()
    with pytest.raises(ValueError):
        SetupConfig(inverse_type='chebyshev').validate()
    with pytest.raises(ValueError):
        SetupConfig(coarsest_poly_order=0).validate()  # newton needs >= 1
    SetupConfig(coarsest_poly_order=0,
                coarsest_inverse_type='arnoldi').validate()


def test_hierarchy_summary_schema():
    A = build_advection_1d(128, 1.0)
    H = setup(A, SetupConfig(strong_threshold=0.5, poly_order=1))
    s = hierarchy_summary(H)
    assert s['num_grids'] == s['num_levels'] + 1
    assert s['n_top'] == 128
    for entry in s['levels']:
        assert entry['n_f'] + entry['n_c'] == entry['n']
    assert s['coarsest']['solver_kind'] == 'newton_roots'


def test_setup_operators_stay_canonical():
    from airmg import validate
    A, _ = build_advection_2d(AdvectionProblem(nx=12, ny=12, vx=0.8, vy=0.6))
    H = setup(A, SetupConfig(auto_truncate_tol=None))
    validate(H.top_A)
    validate(H.coarsest_A)
    for L in H.levels:
        for op in (L.R, L.P, L.A_ff, L.A_fc):
            validate(op)


def test_setup_one_by_one_matrix():
    A = SparseMatrix.from_dense([[4.0]])
    H = setup(A, SetupConfig(coarsest_inverse_type='arnoldi',
                             coarsest_poly_order=3))
    x = apply_matrix_free(H.coarse_solver, H.coarsest_A, np.array([2.0]))
    assert x == pytest.approx([0.5], rel=1e-14)


def test_hierarchy_level_chain_consistent():
    A, _ = build_advection_2d(AdvectionProblem(nx=20, ny=20, vx=0.7, vy=0.7))
    H = setup(A, SetupConfig(auto_truncate_tol=None))
    for upper, lower in zip(H.levels, H.levels[1:]):
        assert lower.n == upper.split.n_c
        assert upper.R.nrows == upper.split.n_c
        assert upper.R.ncols == upper.n
        assert upper.P.nrows == upper.n
        assert upper.P.ncols == upper.split.n_c
    assert H.coarsest_A.nrows == H.levels[-1].split.n_c
