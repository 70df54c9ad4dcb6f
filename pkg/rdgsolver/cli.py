from __future__ import annotations

import configparser
import logging
import sys
from argparse import ArgumentParser, Namespace
from collections import defaultdict
from dataclasses import dataclass, field, fields
from os import PathLike
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from ._metadata import __version__
from .exceptions import ConfigError, NeedTwoMeshesError, RdgError, SingularMatrixError
from .mesh import regularity_ratio
from .problems import (
    REFERENCE_FACTOR, TestCase, case_errors, get_problem, overshoot, reference_solution, run_case
)
from .rdg import sample_grid, write_dump, write_samples
from .reconstruction import OrderPair, moment_matrix, observed_rates, stencil_geometry, wellposedness_check
from .types import SolverMethod

__all__ = [
    'RunConfig', 'load_config', 'config_from_args',

    'RunSummary', 'cmd_run',

    'ConvergenceRow', 'cmd_convergence',

    'AuditRow', 'cmd_check_wellposedness',

    'build_parser', 'main'
]

logger = logging.getLogger(__name__)

CONFIG_SECTION = 'run'


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; command-line flags override values read from a config file."""

    problem: str = '1d-test1'
    order: int = 2
    cells: tuple[int, ...] = (64, )
    cfl: float | None = None
    step_exponent: float | None = None
    t_final: float | None = None
    boundary: tuple[str, ...] | None = None
    output: Path = Path('output')
    threads: int | None = None
    tol: float = 1e-10
    method: SolverMethod = SolverMethod.AUTO
    mesh_ratio: float | None = None
    seed: int = 0
    samples: int = 4
    reference_dir: Path | None = None

    case: TestCase = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        OrderPair.from_order(self.order)

        if not self.cells or any(n < 3 for n in self.cells):
            raise ConfigError('Need at least three cells per direction!', RunConfig, self.cells)

        if self.cfl is not None and not self.cfl > 0.0:
            raise ConfigError('CFL number must be positive!', RunConfig, self.cfl)

        if self.step_exponent is not None and not self.step_exponent > 0.0:
            raise ConfigError('Step exponent must be positive!', RunConfig, self.step_exponent)

        if self.t_final is not None and not self.t_final >= 0.0:
            raise ConfigError('Final time must be nonnegative!', RunConfig, self.t_final)

        if self.mesh_ratio is not None and not self.mesh_ratio >= 1.0:
            raise ConfigError('Mesh ratio must be at least one!', RunConfig, self.mesh_ratio)

        if not self.tol > 0.0:
            raise ConfigError('Solver tolerance must be positive!', RunConfig, self.tol)

        if self.samples < 1:
            raise ConfigError('Need at least one sample point per element!', RunConfig, self.samples)

        case = get_problem(self.problem)

        if self.boundary:
            try:
                case = case.with_boundary(self.boundary)
            except KeyError as e:
                raise ConfigError('Boundary kinds are periodic or dirichlet!', RunConfig, self.boundary) from e

        object.__setattr__(self, 'case', case)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> RunConfig:
        """
        Build a config from string or typed values, as read from a file or the command line.

        Unknown keys are rejected; dashes in keys are read as underscores.

        :raises ConfigError:    Unknown key or malformed value.
        """

        known = {f.name for f in fields(cls) if f.init}
        kwargs: dict[str, Any] = {}

        for key, value in values.items():
            name = key.strip().replace('-', '_')

            if name not in known:
                raise ConfigError('Unknown configuration key!', cls.from_mapping, key)

            if value is None:
                continue

            try:
                kwargs[name] = _convert(name, value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f'Malformed value for {name}!', cls.from_mapping, value) from e

        return cls(**kwargs)


def _split(value: Any) -> list[str]:
    if isinstance(value, str):
        return [v for v in value.replace(',', ' ').split() if v]

    return [str(v) for v in value]


def _convert(name: str, value: Any) -> Any:
    if name in ('order', 'threads', 'seed', 'samples'):
        return int(value)

    if name in ('cfl', 'step_exponent', 't_final', 'tol', 'mesh_ratio'):
        return float(value)

    if name == 'cells':
        return tuple(int(v) for v in _split(value))

    if name == 'boundary':
        return tuple(v.lower() for v in _split(value))

    if name in ('output', 'reference_dir'):
        return Path(value)

    if name == 'method':
        return SolverMethod.from_param(value)

    return str(value)


def load_config(path: str | PathLike[str]) -> dict[str, str]:
    """
    Read a flat ``key = value`` file; ``#`` and ``;`` start comments.

    :raises ConfigError:    The file cannot be read or parsed.
    """

    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))

    try:
        parser.read_string(f'[{CONFIG_SECTION}]\n' + path.read_text(encoding='utf-8'), source=str(path))
    except (OSError, configparser.Error) as e:
        raise ConfigError('Cannot read configuration file!', load_config, f'{path}: {e}') from e

    return dict(parser[CONFIG_SECTION])


def _stem(config: RunConfig, cells: Sequence[int] | None = None) -> str:
    n = 'x'.join(map(str, cells)) if cells is not None else str(config.cells[0])
    return f'{config.case.slug}_k{config.order}_n{n}'


def _format(value: float | None) -> str:
    return '' if value is None or not np.isfinite(value) else f'{value:.6e}'


class RunSummary(NamedTuple):
    problem: str
    k: int
    n_elements: int
    h: float
    dt: float
    steps: int
    error_u: float | None
    error_q: float | None
    overshoot: float | None
    undershoot: float | None
    wall_time: float

    @staticmethod
    def header() -> str:
        return 'problem,k,N,h,dt,steps,error_u,error_q,overshoot,undershoot,wall_time'

    def line(self) -> str:
        return ','.join([
            self.problem, str(self.k), str(self.n_elements), _format(self.h), _format(self.dt), str(self.steps),
            _format(self.error_u), _format(self.error_q), _format(self.overshoot), _format(self.undershoot),
            f'{self.wall_time:.3f}'
        ])


def cmd_run(config: RunConfig) -> RunSummary:
    """
    Solve one case on one mesh.

    Writes the coefficient dump, the sampled values for plotting and a one-line summary into `config.output`.
    """

    if len(config.cells) != 1:
        raise ConfigError('A single run takes exactly one cell count!', cmd_run, config.cells)

    case = config.case

    run = run_case(
        case, config.order, config.cells[0], cfl=config.cfl, step_exponent=config.step_exponent,
        t_final=config.t_final, method=config.method, tol=config.tol, threads=config.threads,
        mesh_ratio=config.mesh_ratio, seed=config.seed
    )

    reference = None

    if case.surrogate and config.reference_dir is not None:
        reference = reference_solution(
            case, config.order, config.cells[0] * REFERENCE_FACTOR, config.reference_dir, run.t,
            method=config.method, tol=config.tol, threads=config.threads
        )

    errors = case_errors(run, reference)

    points, values = sample_grid(run.space, run.dofs, config.samples)
    excursion = overshoot(values, case.admissible[1], case.admissible[0]) if case.admissible else None

    stem = _stem(config)
    mesh = run.space.mesh

    write_dump(
        run.space, run.dofs, config.output / f'{stem}.csv',
        problem=case.slug, t=f'{run.t:.17g}', dt=f'{run.dt:.17g}', steps=run.steps
    )
    write_samples(config.output / f'{stem}_samples.csv', points, values)

    summary = RunSummary(
        case.slug, config.order, mesh.n_elements, mesh.h_max, run.dt, run.steps,
        None if errors is None else errors.error_u, None if errors is None else errors.error_q_total,
        None if excursion is None else excursion.overshoot, None if excursion is None else excursion.undershoot,
        run.wall_time
    )

    (config.output / f'{stem}_summary.csv').write_text(f'{summary.header()}\n{summary.line()}\n', encoding='utf-8')

    logger.info('run finished: %s', summary.line())

    return summary


class ConvergenceRow(NamedTuple):
    n_elements: int
    h: float
    error_u: float
    rate_u: float | None
    error_q: float | None
    rate_q: float | None

    def line(self) -> str:
        return ','.join([
            str(self.n_elements), _format(self.h), _format(self.error_u), _format(self.rate_u),
            _format(self.error_q), _format(self.rate_q)
        ])


def cmd_convergence(config: RunConfig) -> list[ConvergenceRow]:
    """
    Errors and observed rates ``log(e_prev / e) / log(h_prev / h)`` over the configured cell counts.

    Cases without an exact solution are compared to a cached fine-mesh reference, and only report the solution error.

    :raises NeedTwoMeshesError:     Fewer than two cell counts.
    """

    cells = sorted(set(config.cells))

    if len(cells) < 2:
        raise NeedTwoMeshesError(func=cmd_convergence, reason=config.cells)

    case = config.case
    reference = None

    if case.surrogate:
        reference = reference_solution(
            case, config.order, cells[-1] * REFERENCE_FACTOR, config.reference_dir or config.output / 'references',
            config.t_final, method=config.method, tol=config.tol, threads=config.threads
        )

    n_elements, h, error_u, error_q = [], [], [], []

    for n in cells:
        run = run_case(
            case, config.order, n, cfl=config.cfl, step_exponent=config.step_exponent, t_final=config.t_final,
            method=config.method, tol=config.tol, threads=config.threads, mesh_ratio=config.mesh_ratio, seed=config.seed
        )
        errors = case_errors(run, reference)

        if errors is None:
            raise ConfigError('No exact solution or reference to measure against!', cmd_convergence, case.name)

        n_elements.append(run.space.mesh.n_elements)
        h.append(run.space.mesh.h_max)
        error_u.append(errors.error_u)
        error_q.append(errors.error_q_total)

        logger.info('%s N=%d: error_u=%.3e error_q=%s', case.name, n_elements[-1], errors.error_u, errors.error_q_total)

    rates_u = observed_rates(h, error_u)

    if any(e is None for e in error_q):
        rates_q: list[float | None] = [None] * len(cells)
    else:
        rates_q = observed_rates(h, error_q)  # type: ignore[arg-type]

    rows = [ConvergenceRow(*values) for values in zip(n_elements, h, error_u, rates_u, error_q, rates_q)]

    path = config.output / f'{config.case.slug}_k{config.order}_convergence.csv'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(['N,h,error_u,rate_u,error_q,rate_q', *(row.line() for row in rows)]) + '\n')

    return rows


class AuditRow(NamedTuple):
    kinds: str
    elements: int
    singular: int
    det_min: float
    det_max: float
    max_deviation: float
    max_condition: float
    min_bound_ratio: float

    def line(self) -> str:
        return ','.join([
            self.kinds, str(self.elements), str(self.singular), _format(self.det_min), _format(self.det_max),
            _format(self.max_deviation), _format(self.max_condition), _format(self.min_bound_ratio)
        ])


def cmd_check_wellposedness(config: RunConfig) -> list[AuditRow]:
    """
    Assemble the moment matrix of every element and compare its determinant to the closed form.

    Rows are grouped by the stencil kind of every direction. The lower bounds are evaluated at the smallest size
    ratio the mesh admits, ``h_min / h_max``.
    """

    case = config.case
    order = OrderPair.from_order(config.order, case.dim)
    mesh = case.mesh(config.cells[0], config.mesh_ratio, config.seed)
    a_min = 1.0 / regularity_ratio(mesh)

    groups: dict[str, list[Any]] = defaultdict(list)

    for element in range(mesh.n_elements):
        geometry = stencil_geometry(mesh, element)
        key = '/'.join(kind.name.lower() for kind in geometry.kinds)

        try:
            groups[key].append(wellposedness_check(moment_matrix(mesh, element, order), geometry, order, a_min))
        except SingularMatrixError as e:
            logger.error('element %s: %s', mesh.multi_index(element), e.message)
            groups[key].append(None)

    rows = []

    for key, reports in sorted(groups.items()):
        valid = [r for r in reports if r is not None]
        dets = np.array([abs(r.determinant) for r in valid]) if valid else np.array([np.nan])

        rows.append(AuditRow(
            key, len(reports), len(reports) - len(valid), float(dets.min()), float(dets.max()),
            max((r.deviation for r in valid), default=float('nan')),
            max((r.condition for r in valid), default=float('nan')),
            min((abs(r.determinant) / r.lower_bound for r in valid), default=float('nan'))
        ))

    path = config.output / f'{_stem(config, mesh.shape)}_wellposedness.csv'
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join([
        'kinds,elements,singular,det_min,det_max,max_deviation,max_condition,min_bound_ratio',
        *(row.line() for row in rows)
    ]) + '\n')

    for row in rows:
        logger.info('%s', row.line())

    return rows


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='flat key = value file, flags override its values')
    common.add_argument('--problem', help='test case name, e.g. 1d-test1')
    common.add_argument('--order', type=int, help='reconstruction order, 2 or 5')
    common.add_argument('--cells', nargs='+', help='elements per direction, several values for a sweep')
    common.add_argument('--cfl', type=float, help='dt = cfl * h_min ** step_exponent, default from the test case')
    common.add_argument('--step-exponent', type=float, help='exponent of h_min in the time step, default (k + 1) / 3')
    common.add_argument('--t-final', type=float, help='final time, default from the test case')
    common.add_argument('--boundary', nargs='+', help='periodic or dirichlet, one for all or one per direction')
    common.add_argument('--output', type=Path, help='output directory')
    common.add_argument('--threads', type=int, help='worker threads for the reconstruction tables')
    common.add_argument('--tol', type=float, help='iterative linear solver tolerance')
    common.add_argument('--method', choices=[m.value for m in SolverMethod], help='linear solver')
    common.add_argument('--mesh-ratio', type=float, help='random element sizes up to this ratio')
    common.add_argument('--seed', type=int, help='seed of the random element sizes')
    common.add_argument('--samples', type=int, help='plot samples per element and direction')
    common.add_argument('--reference-dir', type=Path, help='cache of surrogate reference solutions')
    common.add_argument('-v', '--verbose', action='count', default=0, help='more logging, repeatable')
    common.add_argument('-q', '--quiet', action='store_true', help='only log errors')

    parser = ArgumentParser(prog='rdgsolver', description='Reduced DG solver for convection-diffusion-reaction tests')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')

    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('run', parents=[common], help='solve one case on one mesh')
    commands.add_parser('convergence', parents=[common], help='errors and rates over a mesh sweep')
    commands.add_parser('check-wellposedness', parents=[common], help='audit the moment matrix determinants')

    return parser


_COMMANDS = {
    'run': cmd_run,
    'convergence': cmd_convergence,
    'check-wellposedness': cmd_check_wellposedness,
}

_NOT_CONFIG = ('command', 'config', 'verbose', 'quiet')


def _configure_logging(args: Namespace) -> None:
    if args.quiet:
        level = logging.ERROR
    else:
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]

    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)


def config_from_args(args: Namespace) -> RunConfig:
    values: dict[str, Any] = load_config(args.config) if args.config is not None else {}
    values.update({k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None})

    return RunConfig.from_mapping(values)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    _configure_logging(args)

    try:
        config = config_from_args(args)
        result = _COMMANDS[args.command](config)  # type: ignore[operator]
    except RdgError as e:
        logger.error('%s', e)
        print(f'error: {e}', file=sys.stderr)
        return 1
    except OSError as e:
        logger.error('i/o failure: %s', e)
        print(f'error: {e}', file=sys.stderr)
        return 2

    if isinstance(result, RunSummary):
        print(result.header())
        print(result.line())
    else:
        for row in result:
            print(row.line())

    return 0
