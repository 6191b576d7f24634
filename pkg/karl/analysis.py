"""Complexity estimates read off a trained model.

Every probe accepts one Image (and returns one result) or a sequence of Images
(and returns a list in the same order). Batches are processed together; the
instrumented run counters still count one pass per image.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from .base_tokenizer import decode2d, encode2d
from .constants import COMPLEXITY_ORDER, DEFAULT_EPS
from .exceptions import InputError
from .model import decode, decode_target, encode, per_image_l1, quantize, reconstruct
from .types import Image, KCEstimate, stack_images

logger = logging.getLogger(__name__)


@dataclass
class DeltaProbe:
    err_low: float
    err_high: float
    image_id: str = ''

    @property
    def delta(self):
        return self.err_low - self.err_high


@dataclass
class InvarianceReport:
    t_hat_small: int
    t_hat_large: int
    budget_small: int
    budget_large: int
    image_id: str = ''

    @property
    def difference(self):
        return abs(self.t_hat_small - self.t_hat_large)


@dataclass
class ComplexityHistogram:
    buckets: list                   # [(lo, hi)] inclusive token ranges
    counts: list
    mean_t_hat: float
    family_means: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)

    @property
    def total(self):
        return sum(self.counts)

    def as_dict(self):
        return {
            'buckets': [f"[{lo}, {hi}]" for lo, hi in self.buckets],
            'counts': self.counts,
            'mean_t_hat': self.mean_t_hat,
            'family_means': self.family_means,
        }


def _unpack(images):
    if isinstance(images, Image):
        return [images], True
    images = list(images)
    if not images:
        raise InputError("no images to analyse")
    return images, False


def _tensor(params, images):
    return stack_images(images).to(params.device, next(params.parameters()).dtype)


def _result(results, single):
    return results[0] if single else results


@torch.no_grad()
def kc_one_pass(params, base, image, T=None, eps=DEFAULT_EPS, threshold=None):
    """KC-hat from one encode and one decode: the count of tokens left active."""
    images, single = _unpack(image)
    T = T or params.t_max
    _, estimates = reconstruct(params, base, _tensor(params, images), T, eps, threshold,
                               ids=[img.id for img in images])
    return _result(estimates, single)


@torch.no_grad()
def _prefix_errors(params, base, images, eps, lengths):
    """Per-image l1 for every prefix length, from one full-budget encoding (B x len(lengths))."""
    grid = encode2d(base, images)
    target = decode_target(images, grid)
    z, _ = encode(params, grid, params.t_max, params.as_condition(eps))
    z, _ = quantize(params, z)
    columns = []
    for t in lengths:
        recon = decode2d(base, decode(params, z.with_active(z.prefix_mask([t] * len(target)))))
        columns.append(per_image_l1(recon, target))
    return torch.stack(columns, dim=1)


@torch.no_grad()
def kc_oracle_search(params, base, image, eps=DEFAULT_EPS, grid=None):
    """Smallest grid prefix whose reconstruction meets eps.

    Returns (KCEstimate, [(t, err), ...]) per image; the curve covers the whole grid.
    """
    images, single = _unpack(image)
    grid = tuple(grid or params.budget_grid)
    if list(grid) != sorted(grid) or grid[0] < 1 or grid[-1] > params.t_max:
        raise InputError(f"oracle grid must ascend within [1, {params.t_max}], got {grid}")
    condition = params.as_condition(eps)
    errors = _prefix_errors(params, base, _tensor(params, images), condition, grid).cpu().numpy()

    results = []
    for img, row in zip(images, errors):
        hits = np.flatnonzero(row <= eps)
        pick = int(hits[0]) if hits.size else len(grid) - 1
        estimate = KCEstimate(
            t_hat=int(grid[pick]), eps=float(eps), budget=params.t_max,
            satisfied=bool(hits.size), achieved_err=float(row[pick]), image_id=img.id,
        )
        results.append((estimate, list(zip(grid, row.tolist()))))
    return _result(results, single)


def oracle_monotonicity(curves):
    """Share of adjacent grid pairs where the error does not increase."""
    steps = [b[1] <= a[1] for curve in curves for a, b in zip(curve, curve[1:])]
    return float(np.mean(steps)) if steps else 1.0


def kc_invariance_probe(params, base, image, eps=DEFAULT_EPS, T_small=None, T_large=None):
    """t_hat at a small and a large budget; a stable estimate ignores the extra tokens."""
    T_small = T_small or params.budget_grid[0]
    T_large = T_large or params.t_max
    if T_small > T_large:
        raise InputError(f"T_small {T_small} exceeds T_large {T_large}")
    images, single = _unpack(image)
    small = kc_one_pass(params, base, images, T_small, eps)
    large = small if T_small == T_large else kc_one_pass(params, base, images, T_large, eps)
    reports = [
        InvarianceReport(s.t_hat, l.t_hat, T_small, T_large, image_id=s.image_id)
        for s, l in zip(small, large)
    ]
    return _result(reports, single)


def invariance_agreement(reports, oracle, grid_step):
    """Share of images with oracle t <= T_small whose two estimates stay within one grid step."""
    eligible = [
        r for r, (estimate, _) in zip(reports, oracle)
        if estimate.satisfied and estimate.t_hat <= r.budget_small
    ]
    if not eligible:
        return {'eligible': 0, 'within_step': float('nan')}
    within = np.mean([r.difference <= grid_step for r in eligible])
    return {'eligible': len(eligible), 'within_step': float(within)}


@torch.no_grad()
def delta_probe(params, base, image, eps=0.0):
    """l1 from the smallest prefix minus l1 from every token of one encoding."""
    images, single = _unpack(image)
    lengths = (params.budget_grid[0], params.t_max)
    errors = _prefix_errors(params, base, _tensor(params, images), params.as_condition(eps), lengths)
    probes = [
        DeltaProbe(err_low=float(low), err_high=float(high), image_id=img.id)
        for img, (low, high) in zip(images, errors.tolist())
    ]
    return _result(probes, single)


def bucket_complexity(params, base, dataset, eps=DEFAULT_EPS, bucket_width=16, T=None, batch_size=64):
    """Histogram of one-pass t_hat over [1, w], [w+1, 2w], ... up to T."""
    if not dataset:
        raise InputError("bucket_complexity needs a nonempty dataset")
    if bucket_width < 1:
        raise InputError("bucket_width must be positive")
    T = T or params.t_max
    estimates = []
    for start in range(0, len(dataset), batch_size):
        estimates.extend(kc_one_pass(params, base, dataset[start:start + batch_size], T, eps))

    n_buckets = -(-T // bucket_width)
    buckets = [(k * bucket_width + 1, min((k + 1) * bucket_width, T)) for k in range(n_buckets)]
    counts = [0] * n_buckets
    for e in estimates:
        counts[(e.t_hat - 1) // bucket_width] += 1

    by_family = defaultdict(list)
    for img, e in zip(dataset, estimates):
        by_family[img.family].append(e.t_hat)
    family_means = {family: float(np.mean(v)) for family, v in by_family.items()}

    return ComplexityHistogram(
        buckets=buckets,
        counts=counts,
        mean_t_hat=float(np.mean([e.t_hat for e in estimates])),
        family_means=family_means,
        estimates=estimates,
    )


def oracle_agreement(one_pass, oracle, grid_step):
    """Median gap between one-pass and oracle t_hat, plus their Spearman rank correlation."""
    if len(one_pass) != len(oracle) or not one_pass:
        raise InputError("one-pass and oracle estimates must pair up and be nonempty")
    a = np.array([e.t_hat for e in one_pass])
    b = np.array([(o[0] if isinstance(o, tuple) else o).t_hat for o in oracle])
    gap = float(np.median(np.abs(a - b)))
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        rho, p_value = float('nan'), float('nan')
    else:
        rho, p_value = stats.spearmanr(a, b)
    return {
        'n': int(a.size),
        'median_abs_gap': gap,
        'median_gap_steps': gap / grid_step,
        'spearman_rho': float(rho),
        'spearman_p': float(p_value),
    }


def family_ordering(hist, order=COMPLEXITY_ORDER):
    """Mean t_hat of the families in ``order`` and whether they strictly increase."""
    present = [f for f in order if f in hist.family_means]
    means = [hist.family_means[f] for f in present]
    return {
        'families': present,
        'means': means,
        'ordered': len(present) > 1 and all(b > a for a, b in zip(means, means[1:])),
    }
