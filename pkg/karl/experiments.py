"""End-to-end experiment steps shared by the management commands and the sweep runner."""
import dataclasses
import logging

import numpy as np

from . import analysis, reports
from .base_tokenizer import fit_base, pixel_error
from .checkpoint import load_base, load_karl, save_base, save_karl
from .constants import THRESHOLD_EVAL_EPS, VARIABLE_EVAL_EPS
from .data import DatasetSpec, load_dataset
from .metrics import eval_fixed_tokens, eval_variable_tokens, threshold_satisfaction
from .model import KarlModel
from .runs import MetricsLog, write_json, write_jsonl
from .training import train
from .utils import get_device, set_seed

logger = logging.getLogger(__name__)


def training_data(cfg):
    train_set = load_dataset(DatasetSpec.from_config(cfg, 'train'))
    val_set = load_dataset(DatasetSpec.from_config(cfg, 'val'))
    return train_set, val_set


def evaluation_data(cfg, dataset='synthetic'):
    """Validation images: the synthetic val split, or every image of a folder."""
    if dataset in ('', 'synthetic'):
        return load_dataset(DatasetSpec.from_config(cfg, 'val', source='synthetic'))
    spec = DatasetSpec.from_config(cfg, 'val', source='folder', path=dataset)
    return load_dataset(dataclasses.replace(spec, val_fraction=1.0))


def train_base_step(cfg, run, train_set=None):
    """Fits and saves the base tokenizer; returns (base, checkpoint path)."""
    if train_set is None:
        train_set, _ = training_data(cfg)
    base = fit_base(train_set, cfg).to(get_device())
    path = run.add(save_base(cfg.resolved_base_checkpoint(), base, cfg))
    write_json(run.add(run.path / 'base_summary.json'), {
        'digest': cfg.base_digest,
        'loss_history': base.loss_history,
        'pixel_l1': pixel_error(base, train_set[:256]),
    })
    return base, path


def ensure_base(cfg, run, train_set=None):
    """Loads the base checkpoint, training it first when it does not exist yet."""
    path = cfg.resolved_base_checkpoint()
    if path.is_file():
        logger.info(f"Using base tokenizer {path}")
        return load_base(path, cfg)
    logger.info(f"No base tokenizer at {path}, training one")
    base, _ = train_base_step(cfg, run, train_set)
    return base


def train_karl_step(cfg, run):
    """Trains KARL against a frozen base; returns (checkpoint path, per-epoch metrics)."""
    train_set, val_set = training_data(cfg)
    base = ensure_base(cfg, run, train_set)

    set_seed(cfg.seed)
    params = KarlModel.from_config(cfg, base).to(get_device())
    metrics_log = MetricsLog(run.add(run.path / 'metrics.jsonl'), cfg.model_digest)
    params, metrics = train(params, base, train_set, cfg, val=val_set, metrics_log=metrics_log)
    path = run.add(save_karl(cfg.resolved_checkpoint(), params, cfg, metrics))

    epochs = [m['epoch'] for m in metrics if 'val_l1' in m]
    if epochs:
        run.add(reports.plot_curves(
            {'val l1': (epochs, [m['val_l1'] for m in metrics if 'val_l1' in m])},
            run.path / 'val_l1.png', 'epoch', 'pixel l1', 'Validation l1 at T_max',
        ))
    write_json(run.add(run.path / 'summary.json'), {
        'digest': cfg.model_digest,
        'epochs': len(metrics),
        'curriculum_violations': sum(m['curriculum_violations'] for m in metrics),
        'final_val_l1': metrics[-1].get('val_l1') if metrics else None,
    })
    return path, metrics


def load_trained(cfg, checkpoint=None):
    base = load_base(cfg.resolved_base_checkpoint(), cfg)
    params = load_karl(checkpoint or cfg.resolved_checkpoint(), cfg, base)
    return params, base


# --- evaluation ---

def evaluate(cfg, params, base, dataset, mode, run, eps_list=None):
    """Runs one evaluation protocol and writes its tables, plots and report."""
    out = run.path
    plots, checks = [], []
    if mode == 'fixed':
        results = eval_fixed_tokens(params, base, dataset, params.budget_grid, batch_size=cfg.batch_size)
        df = reports.frame(results.values())
        counts = sorted(results)
        plots.append(run.add(reports.plot_curves(
            {'l1 x10': (counts, [results[t].l1_x10 for t in counts])},
            out / 'fixed_l1.png', 'tokens', 'l1 x10', 'Same token count for every image',
        )))
        plots.append(run.add(reports.plot_curves(
            {'ssim': (counts, [results[t].ssim for t in counts])},
            out / 'fixed_ssim.png', 'tokens', 'SSIM', 'SSIM at fixed token counts',
        )))
        checks = reports.fixed_token_checks(results)
    elif mode == 'variable':
        eps_list = eps_list or VARIABLE_EVAL_EPS
        results = eval_variable_tokens(params, base, dataset, eps_list, batch_size=cfg.batch_size)
        df = reports.frame(results.values())
        plots.append(run.add(reports.plot_curves(
            {'variable': ([r.tokens_used for r in results.values()], [r.l1_x10 for r in results.values()])},
            out / 'variable_l1.png', 'mean tokens used', 'l1 x10', 'Variable token count per image',
        )))
        checks = reports.variable_token_checks(results)
    else:
        eps_list = eps_list or THRESHOLD_EVAL_EPS
        results = threshold_satisfaction(params, base, dataset, eps_list, batch_size=cfg.batch_size)
        df = reports.frame(results.values())
        plots.append(run.add(reports.plot_curves(
            {eps: (sorted(r.frac_exceed), [r.frac_exceed[m] for m in sorted(r.frac_exceed)])
             for eps, r in results.items()},
            out / 'threshold.png', 'margin', 'fraction exceeding', 'Masked images exceeding eps + margin',
        )))
        checks = reports.threshold_checks(results)

    run.add(reports.write_csv(df, out / f'{mode}.csv'))
    summary = {
        'digest': cfg.model_digest,
        'mode': mode,
        'n_images': len(dataset),
        'rows': df.to_dict(orient='records'),
        'checks': [c.as_dict() for c in checks],
    }
    write_json(run.add(out / 'summary.json'), summary)
    run.add(reports.build_pdf(out / 'report.pdf', f'KARL evaluation: {mode} tokens', cfg.model_digest,
                              tables=[(f'{mode} results', df)], plots=plots, checks=checks))
    return summary


def _chunks(images, size):
    return [images[i:i + size] for i in range(0, len(images), size)]


def _flatten(parts):
    return [item for part in parts for item in part]


def kc_report(cfg, params, base, dataset, run, eps, oracle=False, invariance=False, bucket_width=None):
    """Per-image KC estimates and the complexity summary for one eps."""
    out = run.path
    bucket_width = bucket_width or cfg.budget_step
    chunks = _chunks(dataset, cfg.batch_size)
    grid_step = cfg.budget_step

    hist = analysis.bucket_complexity(params, base, dataset, eps, bucket_width, batch_size=cfg.batch_size)
    deltas = _flatten(analysis.delta_probe(params, base, chunk, eps=eps) for chunk in chunks)
    rows = [
        {**estimate.as_dict(), 'delta': probe.delta, 'err_low': probe.err_low, 'err_high': probe.err_high}
        for estimate, probe in zip(hist.estimates, deltas)
    ]

    delta_by_family = {}
    for img, probe in zip(dataset, deltas):
        delta_by_family.setdefault(img.family, []).append(probe.delta)
    delta_by_family = {f: float(np.mean(v)) for f, v in delta_by_family.items()}
    ordering = analysis.family_ordering(hist)

    summary = {
        'digest': cfg.model_digest,
        'eps': eps,
        'n_images': len(dataset),
        'mean_t_hat': hist.mean_t_hat,
        'histogram': hist.as_dict(),
        'family_ordering': ordering,
        'delta_by_family': delta_by_family,
    }
    checks = reports.family_checks(ordering, delta_by_family) if len(ordering['families']) > 1 else []
    tables = [('Complexity buckets', reports.frame(
        [{'bucket': b, 'count': c} for b, c in zip(summary['histogram']['buckets'], hist.counts)]
    ))]

    oracle_results = None
    if oracle:
        oracle_results = _flatten(analysis.kc_oracle_search(params, base, chunk, eps) for chunk in chunks)
        for row, (estimate, curve) in zip(rows, oracle_results):
            row.update(oracle_t_hat=estimate.t_hat, oracle_satisfied=estimate.satisfied,
                       oracle_curve=[err for _, err in curve])
        agreement = analysis.oracle_agreement(hist.estimates, oracle_results, grid_step)
        monotonicity = analysis.oracle_monotonicity([curve for _, curve in oracle_results])
        summary.update(oracle_agreement=agreement, oracle_monotonicity=monotonicity)
        checks += reports.oracle_checks(agreement, monotonicity)
        tables.append(('One-pass vs oracle', reports.frame([agreement])))

    if invariance:
        probes = _flatten(
            analysis.kc_invariance_probe(params, base, chunk, eps, params.budget_grid[0], params.t_max)
            for chunk in chunks
        )
        for row, report in zip(rows, probes):
            row.update(t_hat_small=report.t_hat_small, t_hat_large=report.t_hat_large)
        if oracle_results is None:
            oracle_results = _flatten(analysis.kc_oracle_search(params, base, chunk, eps) for chunk in chunks)
        inv = analysis.invariance_agreement(probes, oracle_results, grid_step)
        summary['invariance'] = inv
        checks += reports.invariance_checks(inv)

    run.add(write_jsonl(out / 'analysis.jsonl', rows))
    run.add(reports.write_csv(tables[0][1], out / 'buckets.csv'))
    plots = [run.add(reports.plot_curves(
        {'images': ([(lo + hi) / 2 for lo, hi in hist.buckets], hist.counts)},
        out / 'buckets.png', 't_hat', 'images', f'Complexity at eps = {eps}',
    ))]
    summary['checks'] = [c.as_dict() for c in checks]
    write_json(run.add(out / 'summary.json'), summary)
    run.add(reports.build_pdf(out / 'report.pdf', 'KARL complexity analysis', cfg.model_digest,
                              tables=tables, plots=plots, checks=checks))
    return summary
