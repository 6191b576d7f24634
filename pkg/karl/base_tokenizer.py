"""Patch autoencoder standing in for a pretrained 2D image tokenizer.

It is trained once with ``fit_base`` and then frozen; KARL only ever reads its
grid tokens and its decoder.
"""
import logging

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from .constants import CONTINUOUS, DISCRETE
from .exceptions import ConfigError, InputError
from .types import Grid2D, stack_images
from .utils import set_seed

logger = logging.getLogger(__name__)


class BaseTokenizer(nn.Module):
    """Maps C x S x S images to a grid of G = (S / patch)^2 tokens of size D2 and back."""

    def __init__(self, channels=3, image_size=32, patch_size=4, base_dim=16, hidden=64,
                 mode=CONTINUOUS, codebook_size=256, commitment=0.25):
        super().__init__()
        if image_size % patch_size:
            raise ConfigError(f"image_size {image_size} is not divisible by patch_size {patch_size}")
        self.channels = channels
        self.image_size = image_size
        self.patch_size = patch_size
        self.base_dim = base_dim
        self.mode = mode
        self.side = image_size // patch_size
        self.commitment = commitment

        self.encoder = nn.Sequential(
            nn.Conv2d(channels, hidden, patch_size, stride=patch_size),
            nn.GELU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(hidden, base_dim, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(base_dim, hidden, 1),
            nn.GELU(),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.GELU(),
            nn.ConvTranspose2d(hidden, channels, patch_size, stride=patch_size),
        )
        self.codebook = nn.Embedding(codebook_size, base_dim) if mode == DISCRETE else None
        if self.codebook is not None:
            nn.init.uniform_(self.codebook.weight, -1.0 / codebook_size, 1.0 / codebook_size)
        self.loss_history = []

    @classmethod
    def from_config(cls, cfg):
        return cls(
            channels=cfg.channels,
            image_size=cfg.image_size,
            patch_size=cfg.patch_size,
            base_dim=cfg.base_dim,
            hidden=cfg.base_hidden,
            mode=cfg.base_mode,
            codebook_size=cfg.base_codebook_size,
        )

    @property
    def grid_size(self):
        return self.side * self.side

    @property
    def codebook_size(self):
        return 0 if self.codebook is None else self.codebook.num_embeddings

    def check_images(self, images):
        expected = (self.channels, self.image_size, self.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise InputError(f"expected images of shape B x {expected}, got {tuple(images.shape)}")

    def nearest_codes(self, tokens):
        flat = tokens.reshape(-1, tokens.shape[-1])
        weight = self.codebook.weight
        distances = (
            flat.pow(2).sum(1, keepdim=True)
            - 2 * flat @ weight.t()
            + weight.pow(2).sum(1).unsqueeze(0)
        )
        return distances.argmin(dim=1).reshape(tokens.shape[:-1])

    def encode_tokens(self, images):
        """Returns (grid tokens B x G x D2, code indices or None, vq loss)."""
        self.check_images(images)
        latent = rearrange(self.encoder(images), 'b d h w -> b (h w) d')
        if self.codebook is None:
            return latent, None, latent.new_zeros(())
        indices = self.nearest_codes(latent)
        codes = self.codebook(indices)
        vq_loss = F.mse_loss(codes, latent.detach()) + self.commitment * F.mse_loss(latent, codes.detach())
        # straight-through
        tokens = latent + (codes - latent).detach()
        return tokens, indices, vq_loss

    def decode_tokens(self, tokens):
        if tokens.shape[1] != self.grid_size:
            raise InputError(f"expected {self.grid_size} grid tokens, got {tokens.shape[1]}")
        grid = rearrange(tokens, 'b (h w) d -> b d h w', h=self.side, w=self.side)
        return torch.sigmoid(self.decoder(grid))

    def forward(self, images):
        tokens, _, vq_loss = self.encode_tokens(images)
        return self.decode_tokens(tokens), vq_loss


def _as_batch(images):
    if isinstance(images, torch.Tensor):
        return images.unsqueeze(0) if images.ndim == 3 else images
    return stack_images(list(images))


def encode2d(params, images):
    """Encodes images (Image records or a B x C x H x W tensor) into a Grid2D."""
    batch = _as_batch(images).to(next(params.parameters()).device)
    tokens, indices, _ = params.encode_tokens(batch)
    return Grid2D(tokens=tokens, mode=params.mode, code_indices=indices)


def decode2d(params, grid, clamp=True):
    """Decodes a Grid2D into a B x C x H x W image tensor in [0, 1]."""
    images = params.decode_tokens(grid.tokens)
    return images.clamp(0.0, 1.0) if clamp else images


def fit_base(dataset, config, epochs=None, seed=None):
    """Trains a BaseTokenizer on pixel l1 and returns it frozen."""
    from .data import make_loader

    if not dataset:
        raise InputError("fit_base needs a nonempty dataset")
    epochs = config.base_epochs if epochs is None else epochs
    seed = config.seed if seed is None else seed

    set_seed(seed)
    params = BaseTokenizer.from_config(config)
    optimizer = torch.optim.Adam(params.parameters(), lr=config.base_lr)

    params.train()
    for epoch in range(epochs):
        loader = make_loader(dataset, config.batch_size, seed=seed, epoch=epoch,
                             num_workers=config.num_workers, shuffle=True)
        total, count = 0.0, 0
        for batch, _ in loader:
            recon, vq_loss = params(batch)
            l1 = F.l1_loss(recon, batch)
            loss = l1 + vq_loss
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += l1.item() * batch.shape[0]
            count += batch.shape[0]
        epoch_l1 = total / max(count, 1)
        params.loss_history.append(epoch_l1)
        logger.info(f"base epoch {epoch + 1}/{epochs}: pixel l1 {epoch_l1:.4f}")

    params.requires_grad_(False)
    params.eval()
    return params


@torch.no_grad()
def pixel_error(params, dataset, batch_size=64):
    """Mean pixel l1 of decode2d(encode2d(x)) over a dataset."""
    total, count = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        batch = stack_images(dataset[start:start + batch_size]).to(next(params.parameters()).device)
        recon = decode2d(params, encode2d(params, batch))
        total += (recon - batch).abs().mean(dim=(1, 2, 3)).sum().item()
        count += batch.shape[0]
    return total / max(count, 1)
