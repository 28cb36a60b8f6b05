"""Multigrid hierarchy construction for reduction multigrid.

Each level splits the unknowns, approximates the inverse of the fine-fine
block with a fixed polynomial, builds the approximate ideal restriction
``R = [Z I]`` with ``Z = -A_cf * Ahat_ff^-1``, pairs it with a one-point
prolongator, and forms the Galerkin coarse matrix with drop/lump control.
Once a high-order tentative coarse polynomial can solve the current level to
a loose tolerance the hierarchy is truncated there.  After the coarse matrix
is formed only ``A_ff``, ``A_fc``, ``R`` and ``P`` are retained per level, as
the cycle performs fine-point smoothing only.
"""

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .polynomial import (PolySolver, _random_unit_vector, apply_matrix_free,
                         assemble_fixed_sparsity, gmres_poly_arnoldi,
                         gmres_poly_newton, neumann_poly)
from .solve import count_cycle_flops
from .sparse import (SparseMatrix, _row_index, drop_and_lump, extract, spgemm,
                     spmv)
from .splitting import CFSplit, cf_split

__all__ = [
    'SetupConfig',
    'Level',
    'Hierarchy',
    'build_restriction',
    'build_prolongation',
    'coarse_matrix',
    'try_truncate',
    'setup',
    'hierarchy_summary',
]

_log = logging.getLogger(__name__)

_SEED_SPLIT, _SEED_SMOOTHER, _SEED_COARSE_POLY, _SEED_TRUNC_RHS = range(4)

SETUP_PHASES = ('cf_split', 'prolongator', 'polynomial', 'spgemm_R',
                'spgemm_coarse', 'extract', 'drop', 'truncation')

_INVERSE_TYPES = ('arnoldi', 'neumann')
_COARSEST_INVERSE_TYPES = ('newton', 'arnoldi', 'neumann')


def _derive_seed(root, level, role):
    """Stable per-level, per-role seed derived from the root seed."""
    return int(np.random.SeedSequence([root, level, role]).generate_state(1)[0])


@dataclass(frozen=True)
class SetupConfig:
    """Hierarchy construction parameters.

    The fields mirror the benchmark command-line flags one to one.  The
    trailing block (``smooth_type`` onward) exposes variants that this solver
    deliberately does not implement; ``validate`` rejects any non-default
    value there with a clear error.
    """

    strong_threshold: float = 0.99
    ddc_fraction: float = 0.01
    ddc_its: int = 2
    ddc_bins: int = 1000
    poly_order: int = 6
    inverse_type: str = 'arnoldi'
    matrix_free_polys: bool = True
    a_drop: float = 1e-6
    r_drop: float = 0.0
    lump: bool = True
    coarsest_poly_order: int = 100
    coarsest_inverse_type: str = 'newton'
    auto_truncate_tol: float = 0.1
    auto_truncate_start_level: int = None
    max_levels: int = 100
    min_coarse_size: int = 16
    seed: int = 0
    smooth_type: str = 'f'
    one_point_classical_prolong: bool = True
    improve_z_its: int = 0
    improve_w_its: int = 0
    inverse_sparsity_order: int = 1

    def validate(self):
        if not 0.0 <= self.strong_threshold <= 1.0:
            raise ValueError('strong_threshold must lie in [0, 1]')
        if not 0.0 < self.ddc_fraction < 1.0:
            raise ValueError('ddc_fraction must lie in (0, 1)')
        if self.ddc_its < 0:
            raise ValueError('ddc_its must be non-negative')
        if self.ddc_bins < 1:
            raise ValueError('ddc_bins must be positive')
        if self.poly_order < 0:
            raise ValueError('poly_order must be non-negative')
        if self.inverse_type not in _INVERSE_TYPES:
            raise ValueError(f'inverse_type must be one of {_INVERSE_TYPES}')
        if self.a_drop < 0 or self.r_drop < 0:
            raise ValueError('drop tolerances must be non-negative')
        if self.coarsest_inverse_type not in _COARSEST_INVERSE_TYPES:
            raise ValueError('coarsest_inverse_type must be one of '
                             f'{_COARSEST_INVERSE_TYPES}')
        min_order = 1 if self.coarsest_inverse_type == 'newton' else 0
        if self.coarsest_poly_order < min_order:
            raise ValueError('coarsest_poly_order too small for '
                             f'{self.coarsest_inverse_type}')
        if self.auto_truncate_tol is not None and self.auto_truncate_tol < 0:
            raise ValueError('auto_truncate_tol must be non-negative or None')
        if (self.auto_truncate_start_level is not None
                and self.auto_truncate_start_level < 0):
            raise ValueError('auto_truncate_start_level must be non-negative '
                             'or None for the a priori estimate')
        if self.max_levels < 1:
            raise ValueError('max_levels must be at least 1')
        if self.min_coarse_size < 1:
            raise ValueError('min_coarse_size must be at least 1')
        if self.seed < 0:
            raise ValueError('seed must be non-negative')
        if self.smooth_type != 'f':
            raise ValueError("only fine-point smoothing is supported "
                             "(smooth_type='f'); C-point and FCF smoothing "
                             "are not implemented")
        if not self.one_point_classical_prolong:
            raise ValueError('approximate ideal prolongation is not '
                             'implemented; only the one-point classical '
                             'prolongator is supported')
        if self.improve_z_its != 0 or self.improve_w_its != 0:
            raise ValueError('Richardson improvement of the transfer '
                             'operators is not implemented')
        if self.inverse_sparsity_order != 1:
            raise ValueError('only inverse_sparsity_order=1 is implemented')
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Level:
    """Operators retained for the solve on one reduction level.

    ``R`` is ``n_c x n`` acting on vectors in the level's fine ordering (its
    C columns form an identity, its F columns hold ``Z``); ``P`` is
    ``n x n_c`` with unit C rows and one-point F rows.  ``nnz_A`` records the
    size of the level matrix before it was discarded.
    """

    R: SparseMatrix
    P: SparseMatrix
    A_ff: SparseMatrix
    A_fc: SparseMatrix
    f_smoother: PolySolver
    split: CFSplit
    n: int
    nnz_A: int
    f_smoother_assembled: SparseMatrix = None
    ddc_stats: tuple = ()


@dataclass
class Hierarchy:
    """The complete multigrid: per-level operators plus the coarsest matrix,
    its polynomial solver, and the global complexity metrics."""

    levels: list
    coarsest_A: SparseMatrix
    coarse_solver: PolySolver
    top_A: SparseMatrix
    cycle_complexity: float = 0.0
    storage_complexity: float = 0.0
    grid_complexity: float = 0.0
    truncated_at: int = None
    config: SetupConfig = None
    setup_breakdown: dict = field(default_factory=dict)

    @property
    def num_levels(self):
        return len(self.levels)


class _Timer:
    def __init__(self, sink, phase):
        self.sink = sink
        self.phase = phase

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if self.sink is not None:
            self.sink[self.phase] = (self.sink.get(self.phase, 0.0)
                                     + time.perf_counter() - self.start)
        return False


def _negated(A):
    return SparseMatrix(A.nrows, A.ncols, A.row_offsets, A.col_indices,
                        -A.values)


def _smoother_for(A_ff, cfg, seed):
    if cfg.inverse_type == 'arnoldi':
        return gmres_poly_arnoldi(A_ff, cfg.poly_order, seed)
    return neumann_poly(A_ff, cfg.poly_order)


def build_restriction(A, split, cfg, level=0, timings=None,
                      return_assembled=False):
    """Approximate ideal restriction and the operators kept for smoothing.

    Extracts the split blocks, builds the fine-block polynomial (shared by
    the smoother and, in assembled fixed-sparsity form, by the restriction),
    forms ``Z = -A_cf * Ahat_ff^-1`` and scatters ``[Z I]`` into the level's
    fine ordering.  Entries dropped from the ``Z`` block by ``r_drop`` are
    discarded, not lumped.

    Returns
    -------
    (R, A_ff, A_fc, f_smoother) -- plus the assembled approximate inverse
    when ``return_assembled`` is set.
    """
    f, c = split.f_set, split.c_set
    with _Timer(timings, 'extract'):
        A_ff = extract(A, f, f)
        A_fc = extract(A, f, c)
        A_cf = extract(A, c, f)
    with _Timer(timings, 'polynomial'):
        smoother = _smoother_for(A_ff, cfg,
                                 _derive_seed(cfg.seed, level, _SEED_SMOOTHER))
        assembled = assemble_fixed_sparsity(smoother, A_ff)
    with _Timer(timings, 'spgemm_R'):
        Z = _negated(spgemm(A_cf, assembled))
    with _Timer(timings, 'drop'):
        Z = drop_and_lump(Z, cfg.r_drop, lump=False)
    with _Timer(timings, 'spgemm_R'):
        n_c = len(c)
        rows = np.concatenate([_row_index(Z), np.arange(n_c, dtype=np.int64)])
        cols = np.concatenate([f[Z.col_indices], c])
        vals = np.concatenate([Z.values, np.ones(n_c)])
        R = SparseMatrix.from_coo(n_c, A.nrows, rows, cols, vals)
    if return_assembled:
        return R, A_ff, A_fc, smoother, assembled
    return R, A_ff, A_fc, smoother


def build_prolongation(A, split):
    """One-point classical prolongator ``P = [W; I]``.

    Each F row carries a single unit entry in the column of its largest
    coupling (by absolute value) to a C point, ties resolved to the lowest C
    index; C rows are the identity.
    """
    f, c = split.f_set, split.c_set
    n, n_c = split.n, len(c)
    if len(f) == 0:
        return SparseMatrix.identity(n)
    A_fC = extract(A, f, c)
    lens = np.diff(A_fC.row_offsets)
    if np.any(lens == 0):
        bad = f[int(np.flatnonzero(lens == 0)[0])]
        raise ValueError(f'fine point {bad} has no coupling to any coarse '
                         'point; the splitting is invalid for a one-point '
                         'prolongator')
    absv = np.abs(A_fC.values)
    rowmax = np.maximum.reduceat(absv, A_fC.row_offsets[:-1])
    row_of = _row_index(A_fC)
    pos = np.arange(A_fC.nnz, dtype=np.int64)
    candidate = np.where(absv == rowmax[row_of], pos, A_fC.nnz)
    first = np.minimum.reduceat(candidate, A_fC.row_offsets[:-1])
    chosen = A_fC.col_indices[first]
    rows = np.concatenate([f, c])
    cols = np.concatenate([chosen, np.arange(n_c, dtype=np.int64)])
    vals = np.ones(n)
    return SparseMatrix.from_coo(n, n_c, rows, cols, vals)


def coarse_matrix(A, R, P, cfg, timings=None):
    """Galerkin triple product ``R A P`` followed by drop/lump control."""
    with _Timer(timings, 'spgemm_coarse'):
        coarse = spgemm(R, spgemm(A, P))
    with _Timer(timings, 'drop'):
        return drop_and_lump(coarse, cfg.a_drop, lump=cfg.lump)


def _repair_split(A, split):
    """Convert to C any F point whose matrix row has no coupling to a C point.

    Rows without off-diagonal couplings (inflow boundary rows in the upwind
    problems) can be selected as F but leave the one-point prolongator with
    no column to pick; their exact ideal interpolation weight is zero, and
    keeping them on the coarse grid instead is harmless.
    """
    if split.n_f == 0:
        return split
    A_fC = extract(A, split.f_set, split.c_set)
    isolated = np.diff(A_fC.row_offsets) == 0
    if not np.any(isolated):
        return split
    labels = split.labels.copy()
    labels[split.f_set[isolated]] = 1  # C_POINT
    return CFSplit.from_labels(labels)


def _build_coarse_solver(A, cfg, level):
    seed = _derive_seed(cfg.seed, level, _SEED_COARSE_POLY)
    kind = cfg.coarsest_inverse_type
    if kind == 'newton':
        return gmres_poly_newton(A, cfg.coarsest_poly_order, seed)
    if kind == 'arnoldi':
        return gmres_poly_arnoldi(A, cfg.coarsest_poly_order, seed)
    return neumann_poly(A, cfg.coarsest_poly_order)


def _resolve_truncate_start(cfg, n_top):
    """Start level for truncation testing.

    When the config leaves it unset, estimate a priori from the problem size
    and the coarsening-rate bound of two: at least ``log2(n/reach)`` levels
    must pass before the remaining size can be within the coarse
    polynomial's reach (``coarsest_poly_order + 1`` Krylov directions, where
    the tentative solver is close to exact), plus two levels of margin since
    observed coarsening is slower than the bound.
    """
    if cfg.auto_truncate_start_level is not None:
        return cfg.auto_truncate_start_level
    reach = cfg.coarsest_poly_order + 1
    if n_top <= reach:
        return 0
    return int(np.ceil(np.log2(n_top / reach))) + 2


def try_truncate(A, cfg, level, start_level=None):
    """Tentative high-order coarse solver test for early truncation.

    Builds the coarse polynomial, applies it once matrix-free to an
    independent random right-hand side, and accepts (returning the solver)
    when the relative residual meets ``auto_truncate_tol``.  Construction
    failures are logged and treated as "keep coarsening".  ``start_level``
    defaults to the configured one, resolved against this matrix when the
    config leaves it automatic.
    """
    if start_level is None:
        start_level = _resolve_truncate_start(cfg, A.nrows)
    if cfg.auto_truncate_tol is None or level < start_level:
        return None
    try:
        solver = _build_coarse_solver(A, cfg, level)
    except (ValueError, np.linalg.LinAlgError) as exc:
        _log.warning('tentative coarse solver failed at level %d: %s',
                     level, exc)
        return None
    rhs = _random_unit_vector(A.nrows,
                              _derive_seed(cfg.seed, level, _SEED_TRUNC_RHS))
    x = apply_matrix_free(solver, A, rhs)
    residual = np.linalg.norm(rhs - spmv(A, x)) / np.linalg.norm(rhs)
    if np.isfinite(residual) and residual <= cfg.auto_truncate_tol:
        return solver
    return None


def setup(A, cfg):
    """Build the multigrid hierarchy for ``A``.

    Per level: stop if the matrix is small enough (or the level budget is
    exhausted); otherwise test truncation when eligible, split, build the
    restriction/prolongation pair and the Galerkin coarse matrix, and
    descend.  Intermediate level matrices are released once their coarse
    matrix exists; only the top and coarsest matrices are retained.
    """
    cfg.validate()
    if A.nrows != A.ncols:
        raise ValueError('require a square matrix')
    if A.nrows == 0:
        raise ValueError('require a non-empty matrix')
    timings = {phase: 0.0 for phase in SETUP_PHASES}
    truncate_start = _resolve_truncate_start(cfg, A.nrows)
    levels = []
    current = A
    level = 0
    truncated_at = None
    coarse_solver = None
    while True:
        if current.nrows <= cfg.min_coarse_size:
            with _Timer(timings, 'truncation'):
                coarse_solver = _build_coarse_solver(current, cfg, level)
            break
        if level >= cfg.max_levels:
            _log.warning('level budget (%d) exhausted at %d unknowns; '
                         'building the coarse solver here',
                         cfg.max_levels, current.nrows)
            with _Timer(timings, 'truncation'):
                coarse_solver = _build_coarse_solver(current, cfg, level)
            break
        with _Timer(timings, 'truncation'):
            candidate = try_truncate(current, cfg, level,
                                     start_level=truncate_start)
        if candidate is not None:
            coarse_solver = candidate
            truncated_at = level
            break
        with _Timer(timings, 'cf_split'):
            split, ddc_stats = cf_split(
                current, cfg.strong_threshold, cfg.ddc_fraction, cfg.ddc_its,
                _derive_seed(cfg.seed, level, _SEED_SPLIT),
                nbins=cfg.ddc_bins)
        if split.n_c == split.n:
            raise ValueError(f'splitting produced no F points at level {level}')
        if split.n_c > 0:
            split = _repair_split(current, split)
        if split.n_c == 0 or split.n_f == 0:
            # All fine (diagonal matrix) or only isolated fine rows: no
            # reduction to perform, solve this level with the polynomial.
            _log.info('level %d needs no further reduction; building the '
                      'coarse solver directly', level)
            with _Timer(timings, 'truncation'):
                coarse_solver = _build_coarse_solver(current, cfg, level)
            break
        R, A_ff, A_fc, smoother, assembled = build_restriction(
            current, split, cfg, level=level, timings=timings,
            return_assembled=True)
        with _Timer(timings, 'prolongator'):
            P = build_prolongation(current, split)
        coarse = coarse_matrix(current, R, P, cfg, timings=timings)
        levels.append(Level(
            R=R, P=P, A_ff=A_ff, A_fc=A_fc, f_smoother=smoother, split=split,
            n=current.nrows, nnz_A=current.nnz,
            f_smoother_assembled=None if cfg.matrix_free_polys else assembled,
            ddc_stats=tuple(ddc_stats)))
        current = coarse
        level += 1
    H = Hierarchy(levels=levels, coarsest_A=current,
                  coarse_solver=coarse_solver, top_A=A,
                  truncated_at=truncated_at, config=cfg,
                  setup_breakdown=timings)
    retained = 0
    for L in H.levels:
        retained += L.A_ff.nnz + L.A_fc.nnz + L.R.nnz + L.P.nnz
        if L.f_smoother_assembled is not None:
            retained += L.f_smoother_assembled.nnz
    H.storage_complexity = (retained + A.nnz + H.coarsest_A.nnz) / A.nnz
    H.cycle_complexity = count_cycle_flops(H) / (2.0 * A.nnz)
    H.grid_complexity = (sum(L.n for L in H.levels)
                         + H.coarsest_A.nrows) / A.nrows
    return H


def hierarchy_summary(H):
    """JSON-serialisable summary: per-level sizes and nonzero counts, the
    coarse solver, truncation decision and complexity metrics."""
    levels = []
    for idx, L in enumerate(H.levels):
        levels.append({
            'level': idx,
            'n': int(L.n),
            'n_f': int(L.split.n_f),
            'n_c': int(L.split.n_c),
            'nnz_A': int(L.nnz_A),
            'nnz_A_ff': int(L.A_ff.nnz),
            'nnz_A_fc': int(L.A_fc.nnz),
            'nnz_R': int(L.R.nnz),
            'nnz_P': int(L.P.nnz),
            'smoother_kind': L.f_smoother.kind,
            'smoother_order': int(L.f_smoother.order),
            'smoother_effective_order': int(L.f_smoother.effective_order),
            'nnz_smoother_assembled':
                None if L.f_smoother_assembled is None
                else int(L.f_smoother_assembled.nnz),
        })
    return {
        'num_levels': len(H.levels),
        'num_grids': len(H.levels) + 1,
        'n_top': int(H.top_A.nrows),
        'nnz_top': int(H.top_A.nnz),
        'levels': levels,
        'coarsest': {
            'n': int(H.coarsest_A.nrows),
            'nnz': int(H.coarsest_A.nnz),
            'solver_kind': H.coarse_solver.kind,
            'solver_order': int(H.coarse_solver.order),
            'solver_effective_order': int(H.coarse_solver.effective_order),
        },
        'truncated_at': H.truncated_at,
        'cycle_complexity': H.cycle_complexity,
        'storage_complexity': H.storage_complexity,
        'grid_complexity': H.grid_complexity,
    }
