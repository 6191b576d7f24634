"""Latent-distillation encoder/decoder with halting heads and loss conditioning.

The encoder attends over [grid tokens | 1D init tokens | eps token] and emits one
embedding and one halting probability per 1D token. The decoder fills a slate of
masked grid positions by attending to the active 1D tokens only.
"""
import logging
from collections import Counter

import torch
import torch.nn.functional as F
from torch import nn

from .base_tokenizer import decode2d, encode2d
from .constants import CONTINUOUS, DISCRETE, HALT_THRESHOLD
from .exceptions import InputError
from .layers import Transformer
from .quantizer import FactorizedQuantizer
from .types import (
    EpsilonCondition, Grid2D, HaltingVector, KCEstimate, LatentSequence, LossTable, stack_images,
)

logger = logging.getLogger(__name__)


def _init_param(*shape):
    return nn.Parameter(torch.randn(*shape) * 0.02)


class KarlModel(nn.Module):

    def __init__(self, grid_size, base_dim, base_mode=CONTINUOUS, base_codebook=None,
                 token_dim=32, encoder_width=64, encoder_depth=2, decoder_width=64,
                 decoder_depth=2, heads=4, mode_1d=DISCRETE, codebook_size=1024, quant_dim=12,
                 budget_grid=(16, 32, 48, 64), loss_table=None, threshold=HALT_THRESHOLD):
        super().__init__()
        self.grid_size = grid_size
        self.base_mode = base_mode
        self.mode_1d = mode_1d
        self.budget_grid = tuple(sorted(budget_grid))
        self.t_max = self.budget_grid[-1]
        self.loss_table = loss_table if isinstance(loss_table, LossTable) else LossTable(loss_table)
        self.threshold = threshold

        # encoder
        self.grid_in = nn.Linear(base_dim, encoder_width)
        self.grid_pos = _init_param(grid_size, encoder_width)
        self.init_tokens = _init_param(self.t_max, encoder_width)
        self.eps_embedding = nn.Embedding(len(self.loss_table), encoder_width)
        self.encoder = Transformer(encoder_width, encoder_depth, heads=heads)
        self.to_token = nn.Linear(encoder_width, token_dim)
        self.halting_head = nn.Linear(encoder_width, 1)

        self.quantizer = (
            FactorizedQuantizer(token_dim, codebook_size, quant_dim) if mode_1d == DISCRETE else None
        )

        # decoder
        self.token_in = nn.Linear(token_dim, decoder_width)
        self.mask_token = _init_param(decoder_width)
        self.slate_pos = _init_param(grid_size, decoder_width)
        self.decoder = Transformer(decoder_width, decoder_depth, heads=heads)
        if base_mode == DISCRETE:
            if base_codebook is None:
                raise InputError("discrete base mode needs the base codebook")
            self.register_buffer('base_codes', base_codebook.detach().clone())
            self.to_grid = nn.Linear(decoder_width, base_codebook.shape[0])
        else:
            self.base_codes = None
            self.to_grid = nn.Linear(decoder_width, base_dim)

        self.run_counts = Counter()

    @classmethod
    def from_config(cls, cfg, base):
        return cls(
            grid_size=cfg.grid_size,
            base_dim=cfg.base_dim,
            base_mode=cfg.base_mode,
            base_codebook=base.codebook.weight if base.codebook is not None else None,
            token_dim=cfg.token_dim,
            encoder_width=cfg.encoder_width,
            encoder_depth=cfg.encoder_depth,
            decoder_width=cfg.decoder_width,
            decoder_depth=cfg.decoder_depth,
            heads=cfg.heads,
            mode_1d=cfg.mode_1d,
            codebook_size=cfg.codebook_size,
            quant_dim=cfg.quant_dim,
            budget_grid=cfg.budget_grid,
            loss_table=cfg.loss_table,
            threshold=cfg.threshold,
        )

    @property
    def device(self):
        return self.grid_pos.device

    def eps_indices(self, eps, batch):
        if isinstance(eps, EpsilonCondition):
            eps = [eps] * batch
        if len(eps) != batch:
            raise InputError(f"got {len(eps)} eps conditions for a batch of {batch}")
        indices = [self.loss_table.validate(e).table_index for e in eps]
        return torch.tensor(indices, dtype=torch.long, device=self.device)

    def as_condition(self, eps):
        """EpsilonCondition for a raw eps value (clamped into the loss table)."""
        return eps if isinstance(eps, EpsilonCondition) else self.loss_table.discretize(float(eps))


def encode(params, grid, budget, eps):
    """Encodes a Grid2D at token budget T under eps; returns (LatentSequence, HaltingVector)."""
    if budget not in params.budget_grid:
        raise InputError(f"budget {budget} is not in the budget grid {params.budget_grid}")
    batch = grid.tokens.shape[0]
    eps_idx = params.eps_indices(eps, batch)

    grid_tokens = params.grid_in(grid.tokens) + params.grid_pos
    init_tokens = params.init_tokens[:budget].unsqueeze(0).expand(batch, -1, -1)
    eps_token = params.eps_embedding(eps_idx).unsqueeze(1)

    hidden = params.encoder(torch.cat([grid_tokens, init_tokens, eps_token], dim=1))
    # the eps token is dropped here
    states = hidden[:, params.grid_size:params.grid_size + budget]

    params.run_counts['encoder'] += batch
    tokens = params.to_token(states)
    omega = torch.sigmoid(params.halting_head(states)).squeeze(-1)
    return LatentSequence(tokens=tokens, budget=budget), HaltingVector(omega=omega)


def quantize(params, z):
    """Snaps every token to its nearest factorized code; returns (LatentSequence, quant_loss)."""
    if len(z) == 0:
        raise InputError("cannot quantize an empty sequence")
    if z.quantized:
        raise InputError("sequence is already quantized")
    if params.quantizer is None:
        return z, z.tokens.new_zeros(())
    tokens, indices, quant_loss = params.quantizer(z.tokens)
    return LatentSequence(tokens, z.budget, True, indices, z.active), quant_loss


def select_active(z, omega, threshold=HALT_THRESHOLD):
    """Keeps tokens with omega < threshold; an image whose tokens all halt keeps its lowest-omega token."""
    if len(z) != len(omega):
        raise InputError(f"{len(z)} tokens but {len(omega)} halting probabilities")
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must lie in (0, 1), got {threshold}")
    keep = omega.omega < threshold
    empty = ~keep.any(dim=1)
    if empty.any():
        fallback = F.one_hot(omega.omega.argmin(dim=1), len(z)).bool()
        keep = torch.where(empty.unsqueeze(1), fallback, keep)
    return z.with_active(keep)


def decode(params, active, grid_shape=None):
    """Predicts the G-token grid from the active 1D tokens."""
    if grid_shape is not None and grid_shape != params.grid_size:
        raise InputError(f"model decodes {params.grid_size} grid positions, asked for {grid_shape}")
    mask = active.active_mask()
    if len(active) == 0 or not mask.any(dim=1).all():
        raise InputError("decode needs at least one active token per image")
    batch = mask.shape[0]

    tokens = active.tokens.masked_fill(~mask.unsqueeze(-1), 0.0)
    slate = (params.mask_token + params.slate_pos).unsqueeze(0).expand(batch, -1, -1)
    sequence = torch.cat([params.token_in(tokens), slate], dim=1)
    key_mask = torch.cat([mask, mask.new_ones(batch, params.grid_size)], dim=1)

    hidden = params.decoder(sequence, key_mask=key_mask)
    out = params.to_grid(hidden[:, len(active):])
    params.run_counts['decoder'] += batch

    if params.base_mode == CONTINUOUS:
        return Grid2D(tokens=out, mode=CONTINUOUS)

    soft = out.softmax(dim=-1)
    indices = out.argmax(dim=-1)
    hard = F.one_hot(indices, out.shape[-1]).to(soft.dtype)
    weights = hard + soft - soft.detach()
    return Grid2D(tokens=weights @ params.base_codes, mode=DISCRETE, code_indices=indices, logits=out)


def per_image_l1(a, b):
    return (a - b).abs().flatten(1).mean(dim=1)


@torch.no_grad()
def reconstruct(params, base, images, budget, eps, threshold=None, ids=None):
    """One-pass adaptive reconstruction; returns (images B x C x H x W, [KCEstimate])."""
    threshold = params.threshold if threshold is None else threshold
    condition = params.as_condition(eps)
    grid = encode2d(base, images)
    target = decode_target(images, grid)

    z, omega = encode(params, grid, budget, condition)
    z, _ = quantize(params, z)
    active = select_active(z, omega, threshold)
    recon = decode2d(base, decode(params, active))

    errors = per_image_l1(recon, target)
    counts = active.active_counts()
    ids = ids or [''] * len(errors)
    estimates = [
        KCEstimate(
            t_hat=int(t), eps=condition.value, budget=budget,
            satisfied=bool(err <= condition.value), achieved_err=float(err), image_id=image_id,
        )
        for t, err, image_id in zip(counts.tolist(), errors.tolist(), ids)
    ]
    return recon, estimates


def decode_target(images, grid):
    """Pixel tensor on the grid's device for images given as records or a tensor."""
    if not isinstance(images, torch.Tensor):
        images = stack_images(list(images))
    elif images.ndim == 3:
        images = images.unsqueeze(0)
    return images.to(grid.tokens.device, grid.tokens.dtype)
