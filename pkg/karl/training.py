"""Loss-conditioned training.

Every iteration runs two passes per image. The first pass (estimate image
complexity) reconstructs at a sampled budget T under eps = 0 and measures the
achieved pixel error eps0. The second pass (learn to tokenize at estimated
complexity) runs at budget T + dT conditioned on eps0, decodes from the first T
tokens only and supervises the halting head to keep those T and halt the rest.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .base_tokenizer import decode2d, encode2d
from .constants import BCE_CLAMP, CONTINUOUS
from .data import make_loader
from .exceptions import InputError
from .metrics import validation_l1
from .model import decode, encode, per_image_l1, quantize
from .types import EpsilonCondition, Grid2D, LossTable
from .utils import set_seed

logger = logging.getLogger(__name__)


@dataclass
class LossBundle:
    recon: Tensor
    quant: Tensor
    halt: Optional[Tensor]
    beta: float
    lam: float
    total: Tensor

    @classmethod
    def compose(cls, recon, quant, halt=None, beta=0.25, lam=1.0):
        total = recon + beta * quant
        if halt is not None:
            total = total + lam * halt
        return cls(recon, quant, halt, beta, lam, total)

    def as_dict(self):
        return {
            'recon': float(self.recon),
            'quant': float(self.quant),
            'halt': None if self.halt is None else float(self.halt),
            'beta': self.beta,
            'lambda': self.lam,
            'total': float(self.total),
        }


@dataclass
class IterationRecord:
    image_id: str
    T: int
    delta_T: int
    eps0: float
    eps_cond: EpsilonCondition
    losses: dict = field(default_factory=dict)

    @property
    def labels(self):
        return [0] * self.T + [1] * self.delta_T

    def as_dict(self):
        return {
            'id': self.image_id,
            'T': self.T,
            'delta_T': self.delta_T,
            'eps0': self.eps0,
            'eps_cond': self.eps_cond.value,
            'eps_index': self.eps_cond.table_index,
        }


def sample_budget(rng, grid):
    """Uniform draw from the budget grid."""
    if not grid:
        raise InputError("budget grid is empty")
    return int(grid[rng.integers(len(grid))])


def discretize_eps(eps0, table):
    """Smallest table entry >= eps0, clamped to the table maximum."""
    table = table if isinstance(table, LossTable) else LossTable(table)
    return table.discretize(eps0)


def halting_loss(omega, T, delta_T):
    """Mean token BCE against keep (first T) / halt (last delta_T) labels.

    ``omega`` is a HaltingVector, a 1-D tensor or a B x t tensor; T and delta_T may
    be per-image sequences when omega is batched.
    """
    probs = getattr(omega, 'omega', omega)
    if probs.ndim == 1:
        probs = probs.unsqueeze(0)
    length = probs.shape[1]
    T = torch.as_tensor(T, device=probs.device).reshape(-1, 1)
    delta_T = torch.as_tensor(delta_T, device=probs.device).reshape(-1, 1)
    if not torch.all(T + delta_T == length):
        raise InputError(f"halting vector has length {length}, expected T + delta_T")
    positions = torch.arange(length, device=probs.device).unsqueeze(0)
    labels = (positions >= T).to(probs.dtype).expand_as(probs)
    probs = probs.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    return F.binary_cross_entropy(probs, labels)


def recon_loss(base, predicted, target_grid, images, stage):
    """Stage 1 compares grids in token space, stage 2 compares pixels."""
    if stage == 1:
        if predicted.mode == CONTINUOUS:
            return F.mse_loss(predicted.tokens, target_grid.tokens)
        logits = predicted.logits.reshape(-1, predicted.logits.shape[-1])
        return F.cross_entropy(logits, target_grid.code_indices.reshape(-1))
    return F.l1_loss(decode2d(base, predicted, clamp=False), images)


@torch.no_grad()
def achieved_error(base, predicted, images):
    """Per-image pixel l1 of the decoded prediction; a number, not a gradient path."""
    detached = Grid2D(tokens=predicted.tokens.detach(), mode=predicted.mode)
    return per_image_l1(decode2d(base, detached), images)


def eic_step(params, base, images, T, stage=1, beta=0.25):
    """First pass: all T tokens active under eps = 0. Returns (eps0 per image, LossBundle)."""
    grid = encode2d(base, images)
    z, _ = encode(params, grid, T, params.loss_table.condition(0))
    z, quant = quantize(params, z)
    predicted = decode(params, z)
    eps0 = achieved_error(base, predicted, images)
    bundle = LossBundle.compose(recon_loss(base, predicted, grid, images, stage), quant, beta=beta)
    return eps0, bundle


def ltc_step(params, base, images, T, delta_T, eps_cond, stage=1, beta=0.25, lam=1.0):
    """Second pass at budget T + delta_T, decoding from the first T tokens only."""
    batch = images.shape[0]
    T = [T] * batch if isinstance(T, int) else list(T)
    delta_T = [delta_T] * batch if isinstance(delta_T, int) else list(delta_T)
    budgets = {t + d for t, d in zip(T, delta_T)}
    if len(budgets) != 1:
        raise InputError("all images of one LTC batch must share the budget T + delta_T")
    budget = budgets.pop()
    if budget > params.t_max:
        raise InputError(f"T + delta_T = {budget} exceeds T_max = {params.t_max}")

    grid = encode2d(base, images)
    z, omega = encode(params, grid, budget, eps_cond)
    z, quant = quantize(params, z)
    forced = z.with_active(z.prefix_mask(T))
    predicted = decode(params, forced)
    halt = halting_loss(omega, T, delta_T)
    return LossBundle.compose(recon_loss(base, predicted, grid, images, stage), quant, halt, beta, lam)


def _ltc_condition(rng, table, eps0, delta_T):
    if delta_T > 0:
        return table.discretize(eps0)
    # no extra tokens: sample a target below the one reached at full budget
    lower = table.below(eps0)
    return lower[rng.integers(len(lower))] if lower else table.condition(0)


def train_iteration(params, base, batch, rng, config, optimizer, stage=1):
    """One optimizer step on mean(L_EIC + L_LTC) over the batch."""
    images, ids = batch
    if images.shape[0] == 0:
        raise InputError("empty batch")
    images = images.to(params.device, next(params.parameters()).dtype)
    count = images.shape[0]
    table = params.loss_table

    budgets = [sample_budget(rng, params.budget_grid) for _ in range(count)]
    groups = defaultdict(list)
    for index, T in enumerate(budgets):
        groups[T].append(index)

    eps0 = [0.0] * count
    eic_losses = {}
    eic_total = images.new_zeros(())
    for T, members in sorted(groups.items()):
        group_eps0, bundle = eic_step(params, base, images[members], T, stage, config.beta)
        eic_total = eic_total + bundle.total * (len(members) / count)
        eic_losses[T] = bundle.as_dict()
        for index, value in zip(members, group_eps0.tolist()):
            eps0[index] = value

    deltas = [params.t_max - T for T in budgets]
    conditions = [_ltc_condition(rng, table, e, d) for e, d in zip(eps0, deltas)]
    ltc = ltc_step(params, base, images, budgets, deltas, conditions, stage, config.beta, config.lam)

    total = eic_total + ltc.total
    optimizer.zero_grad()
    total.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(params.parameters(), config.grad_clip)
    optimizer.step()

    ltc_losses = ltc.as_dict()
    records = [
        IterationRecord(
            image_id=image_id, T=T, delta_T=d, eps0=e, eps_cond=c,
            losses={'eic': eic_losses[T], 'ltc': ltc_losses, 'total': float(total)},
        )
        for image_id, T, d, e, c in zip(ids, budgets, deltas, eps0, conditions)
    ]
    return params, records


def check_curriculum(records, table=None):
    """Number of records pairing extra tokens with a target below the achieved eps0.

    With a table, targets clamped to its largest entry are not counted.
    """
    top = len(table) - 1 if table is not None else None
    return sum(
        1 for r in records
        if r.delta_T > 0 and r.eps_cond.value < r.eps0 and r.eps_cond.table_index != top
    )


def eps0_histogram(records, table):
    """Per budget, counts of eps0 over the loss-table bins."""
    by_budget = defaultdict(lambda: np.zeros(len(table), dtype=int))
    for r in records:
        by_budget[r.T][table.discretize(r.eps0).table_index] += 1
    return {int(T): counts.tolist() for T, counts in sorted(by_budget.items())}


def build_optimizer(params, config):
    return torch.optim.AdamW(
        [p for p in params.parameters() if p.requires_grad],
        lr=config.lr, weight_decay=config.weight_decay,
    )


def train(params, base, dataset, config, val=None, metrics_log=None, stage_epochs=None):
    """Runs the two training stages and returns (params, per-epoch metrics)."""
    if base.training or any(p.requires_grad for p in base.parameters()):
        raise InputError("the base tokenizer must be frozen before KARL training")
    stage_epochs = stage_epochs or (config.stage1_epochs, config.stage2_epochs)
    set_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = build_optimizer(params, config)

    metrics = []
    iteration = 0
    global_epoch = 0
    for stage, epochs in enumerate(stage_epochs, start=1):
        for epoch in range(epochs):
            params.train()
            loader = make_loader(dataset, config.batch_size, seed=config.seed, epoch=global_epoch,
                                 num_workers=config.num_workers, shuffle=True)
            epoch_records, totals = [], []
            for batch in loader:
                params, records = train_iteration(params, base, batch, rng, config, optimizer, stage)
                iteration += 1
                epoch_records.extend(records)
                totals.append(records[0].losses['total'])
                if metrics_log is not None:
                    metrics_log.iteration(stage, global_epoch, iteration, records)

            violations = check_curriculum(epoch_records, params.loss_table)
            if violations:
                logger.warning(f"stage {stage} epoch {epoch + 1}: {violations} curriculum violations")
            summary = {
                'stage': stage,
                'epoch': global_epoch,
                'iterations': iteration,
                'mean_total': float(np.mean(totals)) if totals else float('nan'),
                'eps0_histogram': eps0_histogram(epoch_records, params.loss_table),
                'curriculum_violations': violations,
            }
            if val:
                params.eval()
                summary['val_l1'] = validation_l1(params, base, val, batch_size=config.batch_size)
            metrics.append(summary)
            if metrics_log is not None:
                metrics_log.epoch(summary)
            logger.info(
                f"stage {stage} epoch {epoch + 1}/{epochs}: total {summary['mean_total']:.4f}"
                + (f", val l1 {summary['val_l1']:.4f}" if 'val_l1' in summary else '')
            )
            global_epoch += 1

    params.eval()
    return params, metrics
