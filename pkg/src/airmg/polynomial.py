"""Polynomial approximations to a matrix inverse.

Three kinds are supported, all applicable matrix-free (SpMVs and vector
updates only, no dot products during application):

* ``arnoldi_coeff`` -- the minimum-residual (GMRES) polynomial of a requested
  degree, built once from a random right-hand side via Arnoldi and stored as
  explicit monomial coefficients.  Intended for low orders.
* ``newton_roots`` -- the same minimising polynomial represented by the roots
  of its residual polynomial (the harmonic Ritz values), Leja-ordered and
  applied in factored Newton form.  Stable to very high order.
* ``neumann`` -- the truncated Neumann series ``sum_k (I - D^-1 A)^k D^-1``.

Low-order solvers can also be assembled as sparse matrices with the sparsity
of each matrix power constrained to the pattern of ``A`` plus its diagonal.
"""

import math
from dataclasses import dataclass

import numpy as np

from .sparse import SparseMatrix, _row_index, diagonal, spgemm_fixed_sparsity, spmv

__all__ = [
    'PolySolver',
    'gmres_poly_arnoldi',
    'gmres_poly_newton',
    'neumann_poly',
    'apply_matrix_free',
    'assemble_fixed_sparsity',
    'export_diagnostics',
]

_BREAKDOWN_REL = 1e-14
_RANK_REL = 1e-12
_SCALE_LIMIT = 1e150


@dataclass(frozen=True)
class PolySolver:
    """A fixed polynomial approximation of a matrix inverse.

    ``order`` is the requested degree of the polynomial; ``effective_order``
    is the degree actually achieved after breakdown/rank truncation.  The
    coefficient kinds store ``coeffs`` (monomial coefficients for
    ``arnoldi_coeff``, series weights on powers of ``I - D^-1 A`` for
    ``neumann``); the Newton kind stores the residual-polynomial ``roots``
    with conjugate pairs adjacent and any stability copies included.
    """

    kind: str
    order: int
    effective_order: int
    coeffs: np.ndarray = None
    roots: np.ndarray = None
    diag_scale: np.ndarray = None
    residual_history: tuple = None


def _random_unit_vector(n, seed):
    """Uniform components in [-1, 1), normalised; keyed by the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    v = rng.uniform(-1.0, 1.0, n)
    return v / np.linalg.norm(v)


def _arnoldi(A, b, m):
    """Arnoldi with modified Gram-Schmidt and selective reorthogonalisation.

    Returns ``(V, H, k, beta)`` with ``V`` holding the basis vectors as rows,
    ``H`` the ``(k+1) x k`` Hessenberg block and ``beta = ||b||``.  A lucky
    breakdown truncates ``k`` when the subdiagonal falls below ``1e-14`` of
    the running maximum Hessenberg column norm.
    """
    n = A.nrows
    m = min(m, n)
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    beta = np.linalg.norm(b)
    if beta == 0:
        raise ValueError('cannot build a Krylov space from a zero vector')
    V[0] = b / beta
    hmax = 0.0
    k = m
    for j in range(m):
        w = spmv(A, V[j])
        norm_before = np.linalg.norm(w)
        for i in range(j + 1):
            h = V[i] @ w
            H[i, j] = h
            w -= h * V[i]
        hnorm = np.linalg.norm(w)
        if hnorm < 0.7 * norm_before:
            # "Twice is enough": one more sweep restores orthogonality.
            for i in range(j + 1):
                h = V[i] @ w
                H[i, j] += h
                w -= h * V[i]
            hnorm = np.linalg.norm(w)
        H[j + 1, j] = hnorm
        hmax = max(hmax, np.linalg.norm(H[:j + 2, j]))
        if hnorm <= _BREAKDOWN_REL * hmax:
            H[j + 1, j] = 0.0
            k = j + 1
            break
        V[j + 1] = w / hnorm
    if np.max(np.abs(H[:k + 1, :k])) == 0.0:
        raise ValueError('matrix is numerically zero on the Krylov space')
    return V[:k + 1], H[:k + 1, :k], k, beta


def _gmres_lsq(H, k, beta):
    """Least-squares GMRES correction and residual norm at step ``k``."""
    rhs = np.zeros(H.shape[0])
    rhs[0] = beta
    y, *_ = np.linalg.lstsq(H[:k + 1, :k], rhs[:k + 1], rcond=None)
    res = np.linalg.norm(rhs[:k + 1] - H[:k + 1, :k] @ y)
    return y, res


def _residual_history(H, k, beta):
    return tuple(float(_gmres_lsq(H, j, beta)[1]) for j in range(1, k + 1))


def gmres_poly_arnoldi(A, order, seed):
    """Minimum-residual polynomial of degree ``order`` in monomial form.

    Runs ``order + 1`` Arnoldi steps from a random unit-norm right-hand side
    and converts the Krylov-space solution into explicit monomial
    coefficients through the change of basis accumulated during Arnoldi.
    Intended for low orders; high orders should use the Newton form.

    The conversion divides by the Hessenberg subdiagonals, which amplifies
    roundoff once the generating residual approaches machine precision (a
    near scaled identity stagnates this way without a hard breakdown).  The
    polynomial is therefore truncated at the step minimising the achievable
    residual including the measured basis growth, so ``effective_order`` can
    fall below ``order`` on easy matrices.
    """
    if A.nrows != A.ncols:
        raise ValueError('require a square matrix')
    if order < 0:
        raise ValueError('order must be non-negative')
    b = _random_unit_vector(A.nrows, seed)
    m = order + 1
    _, H, k, beta = _arnoldi(A, b, m)
    history = _residual_history(H, k, beta)
    # Columns of C express each basis vector as a polynomial in A applied to
    # the start vector: V[j] = sum_i C[i, j] A^i v0.
    C = np.zeros((k, k))
    C[0, 0] = 1.0
    scale = max(np.linalg.norm(H[:j + 2, j]) for j in range(k))
    powers = scale ** np.arange(k)
    growth = np.empty(k)
    growth[0] = 1.0
    for j in range(k - 1):
        shifted = np.zeros(k)
        shifted[1:j + 2] = C[:j + 1, j]
        C[:, j + 1] = (shifted - C[:, :j + 1] @ H[:j + 1, j]) / H[j + 1, j]
        growth[j + 1] = np.abs(C[:, j + 1]) @ powers
    eps = np.finfo(np.float64).eps
    noise = eps * np.maximum.accumulate(growth) * beta
    achievable = np.maximum(history, noise)
    k_use = int(np.argmin(achievable)) + 1
    y, _ = _gmres_lsq(H, k_use, beta)
    coeffs = (C[:k_use, :k_use] @ y) / beta
    return PolySolver(kind='arnoldi_coeff', order=order,
                      effective_order=k_use - 1, coeffs=coeffs,
                      residual_history=history)


def _harmonic_ritz(H, k):
    """Harmonic Ritz values from the ``(k+1) x k`` Hessenberg block.

    Uses a rank-revealing decomposition of the square block: if it is
    numerically rank deficient (the GMRES polynomial has stagnated, e.g. a
    scaled identity), the achieved degree is cut back to the numerical rank
    before the shifted eigenproblem is formed.
    """
    while True:
        Hk = H[:k, :k]
        svals = np.linalg.svd(Hk, compute_uv=False)
        rank = int(np.sum(svals > _RANK_REL * svals[0])) if svals[0] > 0 else 0
        if rank == 0:
            raise ValueError('matrix is numerically zero on the Krylov space')
        if rank == k:
            break
        k = rank
    hsub = H[k, k - 1] if H.shape[0] > k else 0.0
    e_k = np.zeros(k)
    e_k[-1] = 1.0
    try:
        f = np.linalg.solve(Hk.T, e_k)
    except np.linalg.LinAlgError:
        f, *_ = np.linalg.lstsq(Hk.T, e_k, rcond=None)
    M = Hk.copy()
    M[:, -1] += (hsub * hsub) * f
    return np.linalg.eigvals(M), k


def _group_conjugate_units(roots):
    """Group roots into units: single real roots and conjugate pairs."""
    real = [complex(r) for r in roots[roots.imag == 0]]
    upper = np.sort_complex(roots[roots.imag > 0])
    if len(upper) != np.count_nonzero(roots.imag < 0):
        raise ValueError('complex roots of a real matrix must come in '
                         'conjugate pairs')
    units = [(r,) for r in real]
    units += [(t, np.conj(t)) for t in upper]
    return units


def _leja_order(units):
    """Order units so successive factor products stay balanced.

    Start from the unit of largest modulus, then repeatedly append the unit
    maximising the summed log-distance to everything already placed (log
    arithmetic avoids overflow in the products of factors).
    """
    remaining = list(units)
    remaining.sort(key=lambda u: max(abs(t) for t in u), reverse=True)
    ordered = [remaining.pop(0)]
    placed = list(ordered[0])
    while remaining:
        scores = []
        for u in remaining:
            s = sum(math.log(max(abs(t - p), 1e-300))
                    for t in u for p in placed)
            scores.append(s)
        best = int(np.argmax(scores))
        unit = remaining.pop(best)
        ordered.append(unit)
        placed.extend(unit)
    return ordered


def _with_added_roots(units, rel_tol):
    """Duplicate units clustered (relative gap below ``rel_tol``) with an
    earlier root; the extra copy damps the factored application."""
    out = []
    placed = []
    for unit in units:
        copies = 1
        if rel_tol > 0:
            for t in unit:
                if any(abs(t - p) < rel_tol * max(abs(t), abs(p))
                       for p in placed):
                    copies = 2
                    break
        for _ in range(copies):
            out.extend(unit)
        placed.extend(unit)
    return np.array(out, dtype=np.complex128)


def gmres_poly_newton(A, order, seed, added_root_tol=1e-4):
    """Minimum-residual polynomial of degree ``order`` in factored Newton form.

    Runs ``order + 1`` Arnoldi steps, takes the harmonic Ritz values (the
    roots of the residual polynomial) through a rank-revealing path, orders
    them in a Leja sequence with conjugate pairs kept adjacent, and adds
    copies of clustered roots for stability of high-order application.
    """
    if A.nrows != A.ncols:
        raise ValueError('require a square matrix')
    if order < 1:
        raise ValueError('order must be at least 1')
    b = _random_unit_vector(A.nrows, seed)
    _, H, k, beta = _arnoldi(A, b, order + 1)
    theta, k = _harmonic_ritz(H, k)
    if np.any(np.abs(theta) == 0):
        raise ValueError('zero harmonic Ritz value; residual polynomial '
                         'is degenerate')
    units = _leja_order(_group_conjugate_units(theta))
    roots = _with_added_roots(units, added_root_tol)
    return PolySolver(kind='newton_roots', order=order, effective_order=k - 1,
                      roots=roots,
                      residual_history=_residual_history(H, k, beta))


def neumann_poly(A, order):
    """Truncated Neumann series ``sum_{k<=order} (I - D^-1 A)^k D^-1``."""
    if A.nrows != A.ncols:
        raise ValueError('require a square matrix')
    if order < 0:
        raise ValueError('order must be non-negative')
    diag = diagonal(A)
    if np.any(diag == 0):
        raise ValueError('Neumann polynomial requires a nonzero diagonal')
    return PolySolver(kind='neumann', order=order, effective_order=order,
                      coeffs=np.ones(order + 1), diag_scale=1.0 / diag)


def _apply_horner(coeffs, A, b):
    d = len(coeffs) - 1
    y = coeffs[d] * b
    for j in range(d - 1, -1, -1):
        y = spmv(A, y) + coeffs[j] * b
    return y


def _apply_neumann(p, A, b):
    t = p.diag_scale * b
    acc = t.copy()
    for _ in range(p.effective_order):
        t = t - p.diag_scale * spmv(A, t)
        acc += t
    return acc


def _apply_newton(roots, A, b):
    """Factored application of ``q(A) b``.

    Conjugate pairs are fused into real quadratic updates.  The running
    factor product is kept within ``1e+-150`` by rescaling, with the scale
    carried onto the solution contributions; if a contribution still leaves
    the floating-point range (a polynomial genuinely beyond double
    precision) the application stops at the last finite partial sum, so the
    result is always finite and NaN-free.
    """
    x = np.zeros_like(b)
    u = b.copy()
    scale = 1.0
    i = 0
    with np.errstate(over='ignore', invalid='ignore'):
        while i < len(roots):
            th = roots[i]
            if th.imag == 0:
                t = th.real
                delta = (scale / t) * u
                if not np.all(np.isfinite(delta)):
                    break
                x += delta
                u -= spmv(A, u) / t
                i += 1
            else:
                a = th.real
                m2 = (th * np.conj(th)).real
                w = spmv(A, u)
                delta = (scale / m2) * (2.0 * a * u - w)
                if not np.all(np.isfinite(delta)):
                    break
                x += delta
                u += (spmv(A, w) - 2.0 * a * w) / m2
                i += 2
            nrm = np.max(np.abs(u))
            if nrm == 0.0:
                break
            if nrm > _SCALE_LIMIT or nrm < 1.0 / _SCALE_LIMIT:
                u /= nrm
                scale *= nrm
                if not np.isfinite(scale) or scale == 0.0:
                    break
    return x


def apply_matrix_free(p, A, b):
    """Evaluate ``q(A) b`` using only SpMVs and vector updates."""
    b = np.asarray(b, dtype=np.float64)
    if A.nrows != A.ncols or len(b) != A.ncols:
        raise ValueError('solver, matrix and vector shapes disagree')
    if p.kind == 'arnoldi_coeff':
        return _apply_horner(p.coeffs, A, b)
    if p.kind == 'neumann':
        return _apply_neumann(p, A, b)
    if p.kind == 'newton_roots':
        return _apply_newton(p.roots, A, b)
    raise ValueError(f'unknown polynomial kind {p.kind!r}')


def _pattern_with_diagonal(A):
    n = A.nrows
    rows = np.concatenate([_row_index(A), np.arange(n, dtype=np.int64)])
    cols = np.concatenate([A.col_indices, np.arange(n, dtype=np.int64)])
    return SparseMatrix.from_coo(n, n, rows, cols, np.ones(len(rows)))


def assemble_fixed_sparsity(p, A):
    """Assemble the polynomial as a sparse matrix with controlled sparsity.

    Matrix powers beyond the first are constrained to the pattern of ``A``
    plus its diagonal before the next multiplication, so the result never
    leaves that pattern.  Defined for the coefficient kinds only.
    """
    if p.kind == 'newton_roots':
        raise ValueError('fixed-sparsity assembly is defined for coefficient '
                         'forms only, not newton_roots')
    if A.nrows != A.ncols:
        raise ValueError('require a square matrix')
    pattern = _pattern_with_diagonal(A)
    eye = SparseMatrix.identity(A.nrows)._scipy
    if p.kind == 'arnoldi_coeff':
        coeffs = p.coeffs
        base = A
    elif p.kind == 'neumann':
        coeffs = p.coeffs
        # Series in N = I - D^-1 A, right-scaled by D^-1 at the end.
        scaled = SparseMatrix(A.nrows, A.ncols, A.row_offsets, A.col_indices,
                              -p.diag_scale[_row_index(A)] * A.values)
        base = SparseMatrix._from_scipy(eye + scaled._scipy)
    else:
        raise ValueError(f'unknown polynomial kind {p.kind!r}')
    acc = coeffs[0] * eye
    if len(coeffs) > 1:
        acc = acc + coeffs[1] * base._scipy
    power = base
    for k in range(2, len(coeffs)):
        power = spgemm_fixed_sparsity(power, base, pattern)
        acc = acc + coeffs[k] * power._scipy
    out = SparseMatrix._from_scipy(acc)
    if p.kind == 'neumann':
        out = SparseMatrix(out.nrows, out.ncols, out.row_offsets,
                           out.col_indices,
                           out.values * p.diag_scale[out.col_indices])
    return out


def export_diagnostics(p):
    """JSON-serialisable description of a polynomial solver."""
    out = {
        'kind': p.kind,
        'order': p.order,
        'effective_order': p.effective_order,
        'coeffs': None if p.coeffs is None else [float(c) for c in p.coeffs],
        'roots': None if p.roots is None else [[float(r.real), float(r.imag)]
                                               for r in p.roots],
        'generating_residual_history':
            None if p.residual_history is None else list(p.residual_history),
    }
    return out
