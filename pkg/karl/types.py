"""Domain records passed between the tokenizer, the model and the analysis code.

Tensor-valued records are batched: every tensor carries a leading batch dimension.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import Tensor

from .constants import CONTINUOUS
from .exceptions import InputError


@dataclass
class Image:
    """One image: pixels H x W x C in [0, 1]."""
    pixels: np.ndarray
    id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise InputError(f"Image {self.id}: expected H x W x C pixels, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise InputError(f"Image {self.id}: pixel values outside [0, 1]")

    @property
    def family(self):
        """Synthetic family prefix of the id (``<kind>-<split>-<index>``)."""
        return self.id.split('-', 1)[0]

    def as_tensor(self):
        """C x H x W float tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.pixels.transpose(2, 0, 1)))


def stack_images(images):
    """Stacks Image records into a B x C x H x W tensor."""
    if not images:
        raise InputError("empty image batch")
    return torch.stack([img.as_tensor() for img in images])


@dataclass
class Grid2D:
    tokens: Tensor                          # B x G x D2
    mode: str = CONTINUOUS
    code_indices: Optional[Tensor] = None   # B x G, discrete mode
    logits: Optional[Tensor] = None         # B x G x K_base, predicted grids in discrete mode

    @property
    def size(self):
        return self.tokens.shape[1]


@dataclass
class LatentSequence:
    tokens: Tensor                          # B x t x D1
    budget: int
    quantized: bool = False
    code_indices: Optional[Tensor] = None   # B x t
    active: Optional[Tensor] = None         # B x t bool; None means every token is active

    def __len__(self):
        return self.tokens.shape[1]

    def active_mask(self):
        if self.active is None:
            return torch.ones(self.tokens.shape[:2], dtype=torch.bool, device=self.tokens.device)
        return self.active

    def active_counts(self):
        return self.active_mask().sum(dim=1)

    def active_tokens(self, index=0):
        """Active tokens of one image, in order."""
        return self.tokens[index][self.active_mask()[index]]

    def with_active(self, active):
        return LatentSequence(self.tokens, self.budget, self.quantized, self.code_indices, active)

    def prefix_mask(self, counts):
        """Mask keeping the first counts[i] tokens of image i."""
        counts = torch.as_tensor(counts, device=self.tokens.device).reshape(-1, 1)
        positions = torch.arange(len(self), device=self.tokens.device).unsqueeze(0)
        return positions < counts


@dataclass
class HaltingVector:
    omega: Tensor                           # B x t, values in [0, 1]

    def __len__(self):
        return self.omega.shape[1]


@dataclass(frozen=True)
class EpsilonCondition:
    value: float
    table_index: int


@dataclass
class KCEstimate:
    t_hat: int
    eps: float
    budget: int
    satisfied: bool
    achieved_err: float
    image_id: str = ''

    def as_dict(self):
        return {
            'id': self.image_id,
            'eps': self.eps,
            'T': self.budget,
            't_hat': self.t_hat,
            'achieved_err': self.achieved_err,
            'satisfied': self.satisfied,
        }


@dataclass(frozen=True)
class LossTable:
    """Ascending list of discrete l1 targets usable as reconstruction conditions."""
    entries: tuple

    def __post_init__(self):
        entries = tuple(float(v) for v in self.entries)
        if not entries or entries[0] != 0.0 or any(b <= a for a, b in zip(entries, entries[1:])):
            raise InputError("loss table must be strictly ascending and start at 0.0")
        object.__setattr__(self, 'entries', entries)

    def __len__(self):
        return len(self.entries)

    @property
    def maximum(self):
        return self.condition(len(self.entries) - 1)

    def condition(self, index):
        return EpsilonCondition(self.entries[index], index)

    def discretize(self, eps0):
        """Smallest entry >= eps0, clamped to the largest entry."""
        if eps0 < 0:
            raise InputError(f"eps0 must be non-negative, got {eps0}")
        index = int(np.searchsorted(self.entries, eps0, side='left'))
        return self.condition(min(index, len(self.entries) - 1))

    def below(self, eps0):
        """Conditions strictly below eps0."""
        return [self.condition(i) for i, v in enumerate(self.entries) if v < eps0]

    def validate(self, eps):
        if not 0 <= eps.table_index < len(self.entries) or self.entries[eps.table_index] != eps.value:
            raise InputError(f"{eps} does not match the loss table")
        return eps
