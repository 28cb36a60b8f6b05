"""Polynomial approximations to a matrix inverse.

Three representations of q(A) ~= A^{-1} drive the whole solver:

* low-order minimum-residual polynomials in explicit coefficient form (the
  fine-point smoothers),
* the same polynomials assembled as sparse matrices with the sparsity of
  each power capped to the pattern of A (used to build the restriction),
* high-order minimum-residual polynomials applied in factored Newton form
  from the roots of the residual polynomial (the coarse solver).
"""

import numpy as np

from airmg import (SparseMatrix, apply_matrix_free, assemble_fixed_sparsity,
                   build_advection_1d, gmres_poly_arnoldi, gmres_poly_newton,
                   neumann_poly, spmv)
from airmg.polynomial import _random_unit_vector

rng = np.random.default_rng(1)
n = 60
dense = np.where(rng.random((n, n)) < 0.2, rng.uniform(-1, 1, (n, n)), 0.0)
np.fill_diagonal(dense, 0.0)
np.fill_diagonal(dense, np.abs(dense).sum(axis=1) + 1.0)
A = SparseMatrix.from_dense(dense)

print('Residual of q(A) b on the generating right-hand side, by order:')
for order in (0, 1, 2, 4, 6, 8):
    p = gmres_poly_arnoldi(A, order=order, seed=3)
    b = _random_unit_vector(n, 3)
    res = np.linalg.norm(b - spmv(A, apply_matrix_free(p, A, b)))
    print(f'  order {order}: residual {res:.3e}')

print('\nCoefficient form and Newton (root) form represent the same '
      'polynomial:')
order = 8
pa = gmres_poly_arnoldi(A, order=order, seed=3)
pn = gmres_poly_newton(A, order=order, seed=3)
b = rng.uniform(-1, 1, n)
ra = np.linalg.norm(b - spmv(A, apply_matrix_free(pa, A, b)))
rn = np.linalg.norm(b - spmv(A, apply_matrix_free(pn, A, b)))
print(f'  coefficient-form residual {ra:.6e}')
print(f'  Newton-form residual      {rn:.6e}')

print('\nThe Newton form stays stable at order 100:')
big = SparseMatrix.from_dense(np.diag(rng.uniform(1.0, 50.0, 400)))
p100 = gmres_poly_newton(big, order=100, seed=5)
b = rng.uniform(-1, 1, 400)
x = apply_matrix_free(p100, big, b)
print(f'  finite: {bool(np.all(np.isfinite(x)))}, relative residual '
      f'{np.linalg.norm(b - spmv(big, x)) / np.linalg.norm(b):.2e} '
      f'({len(p100.roots)} roots applied)')

print('\nTruncated Neumann series is exact once it covers the nilpotent '
      'part:')
chain = build_advection_1d(6, 1.0)
for order in range(6):
    p = neumann_poly(chain, order)
    b = np.ones(6)
    res = np.linalg.norm(b - spmv(chain, apply_matrix_free(p, chain, b)))
    print(f'  order {order}: residual {res:.3e}')

print('\nAssembled fixed-sparsity inverse (pattern of A plus the diagonal):')
p = gmres_poly_arnoldi(A, order=4, seed=3)
assembled = assemble_fixed_sparsity(p, A)
print(f'  A has {A.nnz} entries; the assembled inverse has {assembled.nnz} '
      '(one SpMV to apply, versus '
      f'{len(p.coeffs) - 1} for the matrix-free form)')
