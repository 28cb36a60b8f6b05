"""Benchmark harness: build a problem, run setup and solve, emit results.

Flags map one to one onto the ``SetupConfig``/``SolveConfig`` fields (see
``SETUP_FLAG_MAP``/``SOLVE_FLAG_MAP``); a JSON record of the run is written
to ``--output`` or stdout.  Exit codes: 0 converged, 1 configuration error,
2 non-convergence or divergence.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .hierarchy import SetupConfig, hierarchy_summary, setup
from .problems import AdvectionProblem, build_advection_1d, build_advection_2d
from .solve import DivergenceError, SolveConfig, richardson_solve
from .sparse import write_matrix_market
from .splitting import F_POINT

__all__ = ['main', 'run', 'emit_report', 'SETUP_FLAG_MAP', 'SOLVE_FLAG_MAP']

SCHEMA_VERSION = 1

# Flag-to-field mapping, kept exhaustive over the config dataclasses (tested
# by reflection).  Boolean fields use paired --flag/--no-flag options.
SETUP_FLAG_MAP = {
    '--strong-threshold': 'strong_threshold',
    '--ddc-fraction': 'ddc_fraction',
    '--ddc-its': 'ddc_its',
    '--ddc-bins': 'ddc_bins',
    '--poly-order': 'poly_order',
    '--inverse-type': 'inverse_type',
    '--matrix-free-polys': 'matrix_free_polys',
    '--a-drop': 'a_drop',
    '--r-drop': 'r_drop',
    '--a-lump': 'lump',
    '--coarsest-poly-order': 'coarsest_poly_order',
    '--coarsest-inverse-type': 'coarsest_inverse_type',
    '--auto-truncate-tol': 'auto_truncate_tol',
    '--auto-truncate-start-level': 'auto_truncate_start_level',
    '--max-levels': 'max_levels',
    '--min-coarse-size': 'min_coarse_size',
    '--seed': 'seed',
    '--smooth-type': 'smooth_type',
    '--one-point-classical-prolong': 'one_point_classical_prolong',
    '--improve-z-its': 'improve_z_its',
    '--improve-w-its': 'improve_w_its',
    '--inverse-sparsity-order': 'inverse_sparsity_order',
}

SOLVE_FLAG_MAP = {
    '--rtol': 'rtol',
    '--atol': 'atol',
    '--max-iters': 'max_iters',
    '--f-smooth-its': 'f_smooth_its',
}


def _build_parser():
    p = argparse.ArgumentParser(
        prog='airmg-bench',
        description='Reduction-multigrid benchmark on upwind advection '
                    'problems.')
    prob = p.add_argument_group('problem')
    prob.add_argument('--dim', type=int, choices=(1, 2), default=2)
    prob.add_argument('--n', type=int, default=64,
                      help='cells per dimension (square grid)')
    prob.add_argument('--nx', type=int, default=None)
    prob.add_argument('--ny', type=int, default=None)
    prob.add_argument('--vx', type=float, default=None)
    prob.add_argument('--vy', type=float, default=None)
    prob.add_argument('--angle', type=float, default=None,
                      help='velocity angle in radians; takes precedence over '
                           '--vx/--vy')
    prob.add_argument('--lx', type=float, default=1.0)
    prob.add_argument('--ly', type=float, default=1.0)

    su = p.add_argument_group('setup (maps 1:1 onto SetupConfig)')
    su.add_argument('--strong-threshold', type=float, default=None)
    su.add_argument('--ddc-fraction', type=float, default=None)
    su.add_argument('--ddc-its', type=int, default=None)
    su.add_argument('--ddc-bins', type=int, default=None)
    su.add_argument('--poly-order', type=int, default=None)
    su.add_argument('--inverse-type', choices=('arnoldi', 'neumann'),
                    default=None)
    su.add_argument('--matrix-free-polys',
                    action=argparse.BooleanOptionalAction, default=None)
    su.add_argument('--a-drop', type=float, default=None)
    su.add_argument('--r-drop', type=float, default=None)
    su.add_argument('--a-lump', action=argparse.BooleanOptionalAction,
                    default=None, dest='a_lump')
    su.add_argument('--coarsest-poly-order', type=int, default=None)
    su.add_argument('--coarsest-inverse-type',
                    choices=('newton', 'arnoldi', 'neumann'), default=None)
    su.add_argument('--auto-truncate-tol', type=float, default=None)
    su.add_argument('--no-auto-truncate', action='store_true',
                    help='disable hierarchy truncation '
                         '(auto_truncate_tol=None)')
    su.add_argument('--auto-truncate-start-level', type=int, default=None)
    su.add_argument('--max-levels', type=int, default=None)
    su.add_argument('--min-coarse-size', type=int, default=None)
    su.add_argument('--seed', type=int, default=None)
    su.add_argument('--smooth-type', default=None)
    su.add_argument('--one-point-classical-prolong',
                    action=argparse.BooleanOptionalAction, default=None)
    su.add_argument('--improve-z-its', type=int, default=None)
    su.add_argument('--improve-w-its', type=int, default=None)
    su.add_argument('--inverse-sparsity-order', type=int, default=None)

    so = p.add_argument_group('solve (maps 1:1 onto SolveConfig)')
    so.add_argument('--rtol', type=float, default=None)
    so.add_argument('--atol', type=float, default=None)
    so.add_argument('--max-iters', type=int, default=None)
    so.add_argument('--f-smooth-its', type=int, default=None)

    out = p.add_argument_group('execution and output')
    out.add_argument('--second-solve', action=argparse.BooleanOptionalAction,
                     default=True,
                     help='run the solve twice and report timings from the '
                          'second (warm) solve')
    out.add_argument('--repeats', type=int, default=1,
                     help='number of timed solve repetitions')
    out.add_argument('--compare-inverse-types', action='store_true',
                     help='paired run: arnoldi (AIRG) vs neumann (nAIR) with '
                          'identical settings')
    out.add_argument('--output', default=None, help='JSON result path '
                     '(default: stdout)')
    out.add_argument('--residual-csv', default=None)
    out.add_argument('--report-csv', default=None)
    out.add_argument('--report-json', default=None)
    out.add_argument('--export-matrix', default=None,
                     help='write the problem matrix in Matrix Market format')
    out.add_argument('--dump-operators', default=None,
                     help='directory for per-level operator Matrix Market '
                          'dumps')
    out.add_argument('--cf-diagnostics', default=None,
                     help='directory for per-level CF labels and '
                          'dominance-ratio histogram CSVs')
    return p


def _config_from_args(args, cls, flag_map):
    overrides = {}
    for flag, field_name in flag_map.items():
        attr = flag.lstrip('-').replace('-', '_')
        if attr == 'a_lump':
            value = args.a_lump
        else:
            value = getattr(args, attr)
        if value is not None:
            overrides[field_name] = value
    return cls(**overrides)


def _problem_from_args(args):
    if args.angle is not None:
        vx, vy = float(np.cos(args.angle)), float(np.sin(args.angle))
    elif args.vx is not None or args.vy is not None:
        vx = args.vx if args.vx is not None else 0.0
        vy = args.vy if args.vy is not None else 0.0
    else:
        vx, vy = float(np.cos(np.pi / 4)), float(np.sin(np.pi / 4))
    nx = args.nx if args.nx is not None else args.n
    if args.dim == 1:
        return AdvectionProblem(nx=nx, ny=0, vx=vx, vy=0.0, Lx=args.lx)
    ny = args.ny if args.ny is not None else args.n
    return AdvectionProblem(nx=nx, ny=ny, vx=vx, vy=vy, Lx=args.lx, Ly=args.ly)


def _build_system(problem):
    if problem.ny == 0:
        A = build_advection_1d(problem.nx, problem.vx)
        return A, np.zeros(A.nrows)
    return build_advection_2d(problem)


def _dump_operators(H, directory):
    os.makedirs(directory, exist_ok=True)
    write_matrix_market(H.top_A, os.path.join(directory, 'top_A.mtx'))
    write_matrix_market(H.coarsest_A, os.path.join(directory,
                                                   'coarsest_A.mtx'))
    for idx, L in enumerate(H.levels):
        for name in ('R', 'P', 'A_ff', 'A_fc'):
            write_matrix_market(getattr(L, name),
                                os.path.join(directory,
                                             f'level{idx}_{name}.mtx'))


def _write_cf_diagnostics(H, directory):
    from .sparse import _row_index, diagonal
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, 'cf_labels.csv'), 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['level', 'node', 'label'])
        for idx, L in enumerate(H.levels):
            for node, lab in enumerate(L.split.labels):
                w.writerow([idx, node, 'F' if lab == F_POINT else 'C'])
    with open(os.path.join(directory, 'ddc_ratio_histograms.csv'), 'w',
              newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['level', 'bin_lo', 'bin_hi', 'count'])
        for idx, L in enumerate(H.levels):
            A_ff = L.A_ff
            diag = np.abs(diagonal(A_ff))
            row_of = _row_index(A_ff)
            off = np.abs(np.where(A_ff.col_indices != row_of,
                                  A_ff.values, 0.0))
            ratios = np.bincount(row_of, weights=off,
                                 minlength=A_ff.nrows) / diag
            counts, edges = np.histogram(ratios, bins=50)
            for b, c in zip(range(50), counts):
                w.writerow([idx, f'{edges[b]:.6g}', f'{edges[b + 1]:.6g}',
                            int(c)])


def _single_run(problem, setup_cfg, solve_cfg, second_solve, repeats):
    A, b = _build_system(problem)
    x0 = np.ones(A.nrows)
    t0 = time.perf_counter()
    H = setup(A, setup_cfg)
    setup_seconds = time.perf_counter() - t0
    t0 = time.perf_counter()
    x, stats = richardson_solve(H, b, x0, solve_cfg)
    first_solve_seconds = time.perf_counter() - t0
    repeat_seconds = []
    n_timed = max(repeats, 1) if second_solve else max(repeats - 1, 0)
    for _ in range(n_timed):
        t0 = time.perf_counter()
        x, stats = richardson_solve(H, b, x0, solve_cfg)
        repeat_seconds.append(time.perf_counter() - t0)
    solve_seconds = repeat_seconds[-1] if repeat_seconds else first_solve_seconds
    result = {
        'schema_version': SCHEMA_VERSION,
        'problem': {
            'dim': 1 if problem.ny == 0 else 2,
            'nx': problem.nx, 'ny': problem.ny,
            'n': A.nrows,
            'vx': problem.vx, 'vy': problem.vy,
            'Lx': problem.Lx, 'Ly': problem.Ly,
        },
        'setup_config': setup_cfg.to_dict(),
        'solve_config': {'rtol': solve_cfg.rtol, 'atol': solve_cfg.atol,
                         'max_iters': solve_cfg.max_iters,
                         'f_smooth_its': solve_cfg.f_smooth_its},
        'summary': hierarchy_summary(H),
        'solve': stats.to_dict(),
        'timings': {
            'setup_seconds': setup_seconds,
            'first_solve_seconds': first_solve_seconds,
            'solve_seconds': solve_seconds,
            'repeat_seconds': repeat_seconds,
            'setup_breakdown': dict(H.setup_breakdown),
        },
    }
    return H, x, stats, result


def run(args):
    """Execute the configured benchmark.

    Returns ``(exit_code, result_dict)``; never raises for solver
    non-convergence (exit code 2 carries it instead).
    """
    problem = _problem_from_args(args)
    setup_cfg = _config_from_args(args, SetupConfig, SETUP_FLAG_MAP)
    if args.no_auto_truncate:
        setup_cfg = SetupConfig(**{**setup_cfg.to_dict(),
                                   'auto_truncate_tol': None})
    setup_cfg.validate()
    solve_cfg = _config_from_args(args, SolveConfig, SOLVE_FLAG_MAP).validate()

    if args.export_matrix:
        A, _ = _build_system(problem)
        write_matrix_market(A, args.export_matrix)

    exit_code = 0
    if args.compare_inverse_types:
        results = {}
        for label, kind in (('airg', 'arnoldi'), ('nair', 'neumann')):
            cfg_k = SetupConfig(**{**setup_cfg.to_dict(),
                                   'inverse_type': kind})
            try:
                _, _, stats, res = _single_run(problem, cfg_k, solve_cfg,
                                               args.second_solve,
                                               args.repeats)
            except DivergenceError as exc:
                results[label] = {'diverged': True, 'error': str(exc),
                                  'iteration': exc.iteration}
                exit_code = 2
                continue
            results[label] = res
            if not stats.converged:
                exit_code = 2
        result = {'schema_version': SCHEMA_VERSION,
                  'mode': 'compare_inverse_types', **results}
        return exit_code, result

    try:
        H, x, stats, result = _single_run(problem, setup_cfg, solve_cfg,
                                          args.second_solve, args.repeats)
    except DivergenceError as exc:
        return 2, {'schema_version': SCHEMA_VERSION, 'diverged': True,
                   'error': str(exc), 'iteration': exc.iteration}
    if args.dump_operators:
        _dump_operators(H, args.dump_operators)
    if args.cf_diagnostics:
        _write_cf_diagnostics(H, args.cf_diagnostics)
    if args.residual_csv:
        with open(args.residual_csv, 'w', newline='') as fh:
            w = csv.writer(fh)
            w.writerow(['iteration', 'residual_norm'])
            for i, r in enumerate(stats.residual_history):
                w.writerow([i, f'{r:.17g}'])
    if not stats.converged:
        exit_code = 2
    return exit_code, result


REPORT_COLUMNS = [
    'n', 'dim', 'nx', 'ny', 'vx', 'vy', 'strong_threshold', 'poly_order',
    'inverse_type', 'iterations', 'converged', 'num_levels', 'truncated_at',
    'cycle_complexity', 'storage_complexity', 'grid_complexity',
    'setup_seconds', 'solve_seconds', 'setup_cf_split', 'setup_prolongator',
    'setup_polynomial', 'setup_spgemm_R', 'setup_spgemm_coarse',
    'setup_extract', 'setup_drop', 'setup_truncation',
]


def _report_row(result):
    summary = result['summary']
    breakdown = result['timings']['setup_breakdown']
    row = {
        'n': result['problem']['n'],
        'dim': result['problem']['dim'],
        'nx': result['problem']['nx'],
        'ny': result['problem']['ny'],
        'vx': result['problem']['vx'],
        'vy': result['problem']['vy'],
        'strong_threshold': result['setup_config']['strong_threshold'],
        'poly_order': result['setup_config']['poly_order'],
        'inverse_type': result['setup_config']['inverse_type'],
        'iterations': result['solve']['iterations'],
        'converged': result['solve']['converged'],
        'num_levels': summary['num_levels'],
        'truncated_at': summary['truncated_at'],
        'cycle_complexity': summary['cycle_complexity'],
        'storage_complexity': summary['storage_complexity'],
        'grid_complexity': summary['grid_complexity'],
        'setup_seconds': result['timings']['setup_seconds'],
        'solve_seconds': result['timings']['solve_seconds'],
    }
    for phase, seconds in breakdown.items():
        row[f'setup_{phase}'] = seconds
    return row


def emit_report(results, csv_path=None, json_path=None):
    """Flatten run records into report rows sorted by problem size and write
    them as CSV and/or JSON.  Returns the rows."""
    if not results:
        raise ValueError('need at least one result record')
    rows = sorted((_report_row(r) for r in results), key=lambda r: r['n'])
    if csv_path:
        with open(csv_path, 'w', newline='') as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    if json_path:
        with open(json_path, 'w') as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write('\n')
    return rows


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        exit_code, result = run(args)
    except (ValueError, OSError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return 1
    try:
        payload = json.dumps(result, indent=2, sort_keys=True)
        if args.output:
            with open(args.output, 'w') as fh:
                fh.write(payload + '\n')
        else:
            print(payload)
        if args.report_csv or args.report_json:
            sources = ([result[k] for k in ('airg', 'nair')
                        if isinstance(result.get(k), dict)
                        and 'summary' in result.get(k, {})]
                       if result.get('mode') == 'compare_inverse_types'
                       else [result] if 'summary' in result else [])
            if sources:
                emit_report(sources, csv_path=args.report_csv,
                            json_path=args.report_json)
    except OSError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return 1
    return exit_code


if __name__ == '__main__':
    sys.exit(main())
