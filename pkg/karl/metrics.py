"""Reconstruction metrics and the evaluation protocols built on them."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .base_tokenizer import decode2d, encode2d
from .constants import SSIM_K1, SSIM_K2, SSIM_WINDOW, THRESHOLD_MARGINS
from .data import batches
from .exceptions import EvaluationError, InputError
from .model import decode, encode, per_image_l1, quantize, reconstruct
from .types import Image

logger = logging.getLogger(__name__)


def _as_batch(x):
    """B x C x H x W float64 tensor from an Image, an array or a tensor."""
    if isinstance(x, Image):
        x = x.as_tensor()
    elif isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    x = x.detach().to('cpu', torch.float64)
    return x.unsqueeze(0) if x.ndim == 3 else x


def _pair(a, b):
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def pixel_l1(a, b):
    a, b = _pair(a, b)
    return float((a - b).abs().mean())


def psnr_per_image(a, b):
    a, b = _pair(a, b)
    mse = (a - b).pow(2).flatten(1).mean(dim=1)
    return [math.inf if m == 0 else 10.0 * math.log10(1.0 / m) for m in mse.tolist()]


def psnr(a, b):
    """Peak signal-to-noise ratio for data range 1; identical images give inf."""
    return float(np.mean(psnr_per_image(a, b)))


def ssim_per_image(a, b, window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2):
    """Mean SSIM over the valid 7 x 7 uniform windows and channels, one value per image."""
    a, b = _pair(a, b)
    if window > min(a.shape[-2:]):
        raise InputError(f"SSIM window {window} exceeds image size {tuple(a.shape[-2:])}")
    c1, c2 = k1 ** 2, k2 ** 2

    def local_mean(x):
        return F.avg_pool2d(x, window, stride=1)

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a ** 2
    var_b = local_mean(b * b) - mu_b ** 2
    cov = local_mean(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    )
    return ssim_map.flatten(1).mean(dim=1).tolist()


def ssim(a, b, window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2):
    return float(np.mean(ssim_per_image(a, b, window, k1, k2)))


@dataclass
class MetricReport:
    l1_x10: float
    psnr: float
    ssim: float
    tokens_used: float
    runs: tuple
    n_images: int
    label: float = 0.0

    def as_dict(self):
        return {
            'label': self.label,
            'l1_x10': self.l1_x10,
            'psnr': self.psnr,
            'ssim': self.ssim,
            'tokens_used': self.tokens_used,
            'encoder_runs': self.runs[0],
            'decoder_runs': self.runs[1],
            'n_images': self.n_images,
        }


@dataclass
class ThresholdReport:
    eps: float
    frac_exceed: dict = field(default_factory=dict)
    avg_err_exceed: float = math.nan
    n_masked: int = 0
    n_images: int = 0

    def is_nested(self):
        fractions = [self.frac_exceed[m] for m in sorted(self.frac_exceed)]
        return all(b <= a for a, b in zip(fractions, fractions[1:]))

    def as_dict(self):
        row = {'eps': self.eps, 'n_images': self.n_images, 'n_masked': self.n_masked}
        row.update({f"exceed_{m:.2f}": v for m, v in sorted(self.frac_exceed.items())})
        row['avg_err_exceed'] = self.avg_err_exceed
        return row


class _Accumulator:

    def __init__(self):
        self.l1, self.psnr, self.ssim, self.tokens = [], [], [], []

    def add(self, recon, target, tokens):
        self.l1.extend(per_image_l1(recon.double(), target.double()).tolist())
        self.psnr.extend(psnr_per_image(recon, target))
        self.ssim.extend(ssim_per_image(recon, target))
        self.tokens.extend(float(t) for t in tokens)

    def report(self, runs, label):
        n = len(self.l1)
        return MetricReport(
            l1_x10=10.0 * float(np.mean(self.l1)),
            psnr=float(np.mean(self.psnr)),
            ssim=float(np.mean(self.ssim)),
            tokens_used=float(np.mean(self.tokens)),
            runs=(runs[0] / n, runs[1] / n),
            n_images=n,
            label=label,
        )


def _require(dataset):
    if not dataset:
        raise InputError("evaluation needs a nonempty dataset")


def _prepare(params, images):
    return images.to(params.device, next(params.parameters()).dtype)


@torch.no_grad()
def eval_fixed_tokens(params, base, dataset, token_counts, batch_size=64):
    """Reconstructs every image from its first t tokens for each requested t.

    Each batch is encoded once at T_max with eps = 0; every count decodes a prefix of that encoding.
    """
    _require(dataset)
    for t in token_counts:
        if t not in params.budget_grid:
            raise InputError(f"token count {t} is not in the budget grid {params.budget_grid}")
    eps0 = params.loss_table.condition(0)
    accumulators = {t: _Accumulator() for t in token_counts}
    start = dict(params.run_counts)
    for images, _ in batches(dataset, batch_size):
        images = _prepare(params, images)
        z, _ = encode(params, encode2d(base, images), params.t_max, eps0)
        z, _ = quantize(params, z)
        count = images.shape[0]
        for t, acc in accumulators.items():
            recon = decode2d(base, decode(params, z.with_active(z.prefix_mask([t] * count))))
            acc.add(recon, images, [t] * count)
    encoder_runs, decoder_runs = _runs_since(params, start)
    runs = (encoder_runs, decoder_runs / len(accumulators))

    reports = {}
    for t, acc in accumulators.items():
        reports[t] = acc.report(runs, label=t)
        logger.info(f"fixed {t} tokens: l1x10 {reports[t].l1_x10:.4f}, ssim {reports[t].ssim:.4f}")
    return reports


def _runs_since(params, start):
    return (
        params.run_counts['encoder'] - start.get('encoder', 0),
        params.run_counts['decoder'] - start.get('decoder', 0),
    )


@torch.no_grad()
def eval_variable_tokens(params, base, dataset, eps_list, batch_size=64, budget=None):
    """One-pass adaptive reconstruction per eps; every image gets one encode and one decode."""
    _require(dataset)
    budget = budget or params.t_max
    reports = {}
    for eps in eps_list:
        acc = _Accumulator()
        start = dict(params.run_counts)
        for images, ids in batches(dataset, batch_size):
            images = _prepare(params, images)
            recon, estimates = reconstruct(params, base, images, budget, eps, ids=ids)
            acc.add(recon, images, [e.t_hat for e in estimates])
        runs = _runs_since(params, start)
        if runs != (len(dataset), len(dataset)):
            raise EvaluationError(f"expected one encoder and one decoder pass per image, counted {runs}")
        reports[eps] = acc.report(runs, label=eps)
        logger.info(f"eps {eps}: {reports[eps].tokens_used:.1f} tokens, l1x10 {reports[eps].l1_x10:.4f}")
    return reports


@torch.no_grad()
def threshold_satisfaction(params, base, dataset, eps_list, margins=THRESHOLD_MARGINS, batch_size=64,
                           budget=None):
    """How often masked reconstructions miss their eps target, by tolerance margin."""
    _require(dataset)
    budget = budget or params.t_max
    reports = {}
    for eps in eps_list:
        masked_errors = []
        for images, ids in batches(dataset, batch_size):
            _, estimates = reconstruct(params, base, _prepare(params, images), budget, eps, ids=ids)
            masked_errors.extend(e.achieved_err for e in estimates if e.t_hat < e.budget)
        errors = np.asarray(masked_errors, dtype=float)
        frac = {
            m: float((errors > eps + m).mean()) if errors.size else 0.0
            for m in margins
        }
        exceeders = errors[errors > eps]
        reports[eps] = ThresholdReport(
            eps=eps,
            frac_exceed=frac,
            avg_err_exceed=float(exceeders.mean()) if exceeders.size else math.nan,
            n_masked=int(errors.size),
            n_images=len(dataset),
        )
    return reports


@torch.no_grad()
def validation_l1(params, base, images, batch_size=64):
    """Mean pixel l1 at T_max with eps = 0 and every token active."""
    _require(images)
    eps0 = params.loss_table.condition(0)
    total = 0.0
    for batch, _ in batches(images, batch_size):
        batch = _prepare(params, batch)
        z, _ = encode(params, encode2d(base, batch), params.t_max, eps0)
        z, _ = quantize(params, z)
        total += per_image_l1(decode2d(base, decode(params, z)), batch).sum().item()
    return total / len(images)
