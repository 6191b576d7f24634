"""Scaling sweeps: one axis varied over a shared config, every cell trained and evaluated.

Cells are resumable: a cell whose manifest says completed under the same digest is
read back instead of retrained. Base tokenizers are shared between cells with the
same base digest.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from decouple import Csv, RepositoryEnv, UndefinedValueError
from django.db import DatabaseError
from django.utils import timezone

from . import reports
from .config import FileConfig, load_config
from .constants import CONTINUOUS, DISCRETE, SIZE_PRESETS, SWEEP_AXES, VARIABLE_EVAL_EPS
from .data import DatasetSpec, load_dataset
from .exceptions import ConfigError
from .experiments import load_trained, train_karl_step
from .metrics import eval_fixed_tokens, eval_variable_tokens
from .models import ExperimentRun, log_activity
from .runs import RunDirectory, write_json

logger = logging.getLogger(__name__)

AXIS_NAMES = tuple(axis for axis, _ in SWEEP_AXES)
INT_AXES = ('encoder_width', 'encoder_depth', 'decoder_width', 'decoder_depth', 'codebook_size')
TARGET_CELL = 'small/large'


@dataclass(frozen=True)
class SweepSpec:
    config: object
    axis: str
    values: tuple
    eps_list: tuple = VARIABLE_EVAL_EPS

    def __post_init__(self):
        if self.axis not in AXIS_NAMES:
            raise ConfigError(f"Unknown sweep axis '{self.axis}', expected one of {', '.join(AXIS_NAMES)}")
        if not self.values:
            raise ConfigError("A sweep needs at least one value")
        for value in self.values:
            cell_changes(self.axis, value)

    def cells(self):
        return [(value, cell_config(self.config, self.axis, value)) for value in self.values]


def _pair(value, allowed):
    parts = str(value).split('/')
    if len(parts) != 2 or any(p not in allowed for p in parts):
        raise ConfigError(f"Sweep value '{value}' must look like <{'|'.join(allowed)}>/<{'|'.join(allowed)}>")
    return parts


def cell_changes(axis, value):
    """Config overrides for one sweep cell."""
    if axis in INT_AXES:
        try:
            return {axis: int(value)}
        except ValueError as exc:
            raise ConfigError(f"Sweep value '{value}' for {axis} is not an integer") from exc
    if axis == 'continuous_vs_discrete':
        base_mode, mode_1d = _pair(value, (CONTINUOUS, DISCRETE))
        return {'base_mode': base_mode, 'mode_1d': mode_1d}
    encoder, decoder = _pair(value, tuple(SIZE_PRESETS))
    return {
        'encoder_width': SIZE_PRESETS[encoder][0],
        'encoder_depth': SIZE_PRESETS[encoder][1],
        'decoder_width': SIZE_PRESETS[decoder][0],
        'decoder_depth': SIZE_PRESETS[decoder][1],
    }


def slug(value):
    return re.sub(r'[^A-Za-z0-9]+', '-', str(value)).strip('-')


def cell_config(shared, axis, value):
    return shared.replace(
        name=f"{shared.name}-{axis}-{slug(value)}",
        run_dir='',
        checkpoint='',
        base_checkpoint='',
        **cell_changes(axis, value),
    )


def load_sweep_spec(path):
    """Reads ``config``, ``axis`` and ``values`` (plus optional ``eps``) from a key = value file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Sweep spec not found: {path}")
    source = FileConfig(RepositoryEnv(str(path)))
    try:
        config_path = Path(source('config'))
        axis = source('axis')
        values = source('values', cast=Csv(post_process=tuple))
        eps_list = source('eps', default=','.join(str(e) for e in VARIABLE_EVAL_EPS),
                          cast=Csv(cast=float, post_process=tuple))
    except (UndefinedValueError, ValueError) as exc:
        raise ConfigError(f"Bad sweep spec {path}: {exc}") from exc
    if not config_path.is_absolute():
        config_path = path.parent / config_path
    return SweepSpec(config=load_config(config_path), axis=axis, values=values, eps_list=eps_list)


def _ledger(cfg, run_dir):
    try:
        return ExperimentRun.objects.create(kind='sweep', name=cfg.name, config_digest=cfg.model_digest,
                                            run_dir=str(run_dir), status='Running')
    except DatabaseError as exc:
        logger.warning(f"Experiment ledger unavailable: {exc}")
        return None


def _close(record, status, log):
    if record is None:
        return
    record.status = status
    record.log = log
    record.finished_at = timezone.now()
    record.save()


def run_cell(cfg, run, eps_list, eval_set):
    """Trains one cell and measures both allocation regimes on the eval set."""
    train_karl_step(cfg, run)
    params, base = load_trained(cfg)
    fixed = eval_fixed_tokens(params, base, eval_set, params.budget_grid, batch_size=cfg.batch_size)
    variable = eval_variable_tokens(params, base, eval_set, eps_list, batch_size=cfg.batch_size)
    result = {
        'fixed': [r.as_dict() for r in fixed.values()],
        'variable': [r.as_dict() for r in variable.values()],
    }
    write_json(run.add(run.path / 'summary.json'), {'digest': cfg.model_digest, **result})
    return result


def run_sweep(spec, out):
    """Runs every cell of a sweep and writes the combined curves; returns the results by value."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    eval_set = load_dataset(DatasetSpec.from_config(spec.config, 'val'))

    results, failures = {}, {}
    for value, cfg in spec.cells():
        cell_dir = out / 'cells' / slug(value)
        cfg = cfg.replace(
            run_dir=str(cell_dir),
            base_checkpoint=str(out / 'bases' / f"base-{cfg.base_digest[:8]}.ckpt"),
        )
        run = RunDirectory(cell_dir, 'sweep', cfg.model_digest)
        if run.is_completed() and (cell_dir / 'summary.json').is_file():
            logger.info(f"Sweep cell {value} already completed, skipping")
            results[value] = run.read_manifest()['result']
            continue

        run.start()
        record = _ledger(cfg, cell_dir)
        try:
            cfg.to_file(run.add(cell_dir / 'config.env'))
            results[value] = run_cell(cfg, run, spec.eps_list, eval_set)
        except Exception as exc:
            logger.exception(f"Sweep cell {value} failed")
            failures[value] = str(exc)
            run.fail(exc)
            _close(record, 'Failed', str(exc))
            continue
        run.complete(result=results[value])
        _close(record, 'Completed', f"cell {value} done")
        if record is not None:
            log_activity('Sweep Cell', f"{spec.axis}={value} ({cfg.model_digest[:8]})")

    summary = combine(spec, results, out)
    summary['failures'] = failures
    write_json(out / 'sweep_summary.json', summary)
    return results, failures


def standing(variable_results, target=TARGET_CELL):
    """Rank of the target cell by l1 at a common mean token count."""
    if target not in variable_results or len(variable_results) < 2:
        return {}
    curves = {}
    for value, rows in variable_results.items():
        rows = sorted(rows, key=lambda r: r['tokens_used'])
        curves[value] = ([r['tokens_used'] for r in rows], [r['l1_x10'] for r in rows])
    matched = float(np.median([np.mean(xs) for xs, _ in curves.values()]))
    scores = {value: float(np.interp(matched, xs, ys)) for value, (xs, ys) in curves.items()}
    order = sorted(scores, key=scores.get)
    rank = order.index(target) + 1
    return {
        'matched_tokens': matched,
        'scores': scores,
        'rank': rank,
        'cells': len(order),
        'best': rank == 1,
        'worst': rank == len(order),
    }


def combine(spec, results, out):
    """Writes the fixed-token and variable-token comparison curves and the sweep report."""
    if not results:
        return {'axis': spec.axis, 'cells': []}
    fixed_series = {
        value: ([r['label'] for r in res['fixed']], [r['l1_x10'] for r in res['fixed']])
        for value, res in results.items()
    }
    variable_series = {
        value: ([r['tokens_used'] for r in res['variable']], [r['l1_x10'] for r in res['variable']])
        for value, res in results.items()
    }
    plots = [
        reports.plot_curves(fixed_series, out / 'fixed_tokens.png', 'tokens', 'l1 x10',
                            f'Same token count, by {spec.axis}'),
        reports.plot_curves(variable_series, out / 'variable_tokens.png', 'mean tokens used', 'l1 x10',
                            f'Variable token count, by {spec.axis}'),
    ]
    fixed_df = reports.frame([{'value': v, **r} for v, res in results.items() for r in res['fixed']])
    variable_df = reports.frame([{'value': v, **r} for v, res in results.items() for r in res['variable']])
    reports.write_csv(fixed_df, out / 'fixed_tokens.csv')
    reports.write_csv(variable_df, out / 'variable_tokens.csv')

    cell_standing = standing({v: res['variable'] for v, res in results.items()}) \
        if spec.axis == 'encoder_decoder' else {}
    checks = reports.sweep_checks(cell_standing)
    reports.build_pdf(out / 'report.pdf', f'KARL sweep over {spec.axis}', spec.config.model_digest,
                      tables=[('Fixed token count', fixed_df), ('Variable token count', variable_df)],
                      plots=plots, checks=checks)
    return {
        'axis': spec.axis,
        'cells': list(results),
        'standing': cell_standing,
        'checks': [c.as_dict() for c in checks],
    }
