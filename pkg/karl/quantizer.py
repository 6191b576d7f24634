"""Factorized vector quantizer for the 1D latent tokens.

Tokens are projected to a low-dimensional space, snapped to the nearest code and
projected back. Gradients reach the encoder through the straight-through estimator.
"""
import torch
import torch.nn.functional as F
from torch import nn


class FactorizedQuantizer(nn.Module):

    def __init__(self, token_dim, codebook_size=1024, quant_dim=12):
        super().__init__()
        self.codebook_size = codebook_size
        self.quant_dim = quant_dim
        self.project_in = nn.Linear(token_dim, quant_dim)
        self.project_out = nn.Linear(quant_dim, token_dim)
        self.codes = nn.Embedding(codebook_size, quant_dim)
        nn.init.uniform_(self.codes.weight, -1.0 / codebook_size, 1.0 / codebook_size)

    def nearest(self, z_e):
        """Index of the nearest code for every row of z_e (... x quant_dim)."""
        flat = z_e.reshape(-1, self.quant_dim)
        weight = self.codes.weight
        distances = (
            flat.pow(2).sum(1, keepdim=True)
            - 2 * flat @ weight.t()
            + weight.pow(2).sum(1).unsqueeze(0)
        )
        return distances.argmin(dim=1).reshape(z_e.shape[:-1])

    def forward(self, tokens):
        """Returns (quantized tokens, code indices, quant loss)."""
        z_e = self.project_in(tokens)
        indices = self.nearest(z_e)
        z_q = self.codes(indices)

        codebook_loss = F.mse_loss(z_q, z_e.detach())
        commitment_loss = F.mse_loss(z_e, z_q.detach())

        z_st = z_e + (z_q - z_e).detach()
        return self.project_out(z_st), indices, codebook_loss + commitment_loss

    def lookup(self, indices):
        """Token embeddings for stored code indices."""
        return self.project_out(self.codes(indices))
