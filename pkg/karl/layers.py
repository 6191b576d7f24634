"""Pre-norm transformer blocks shared by the KARL encoder and decoder; attention takes a key mask."""
import torch
from einops import rearrange
from torch import einsum, nn

# helpers

def exists(val):
    return val is not None

# helper classes

class PreNorm(nn.Module):
    def __init__(self, dim, fn):
        super().__init__()
        self.fn = fn
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, **kwargs):
        return self.fn(self.norm(x), **kwargs)


class FeedForward(nn.Module):
    def __init__(self, dim, mult=4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim * mult),
            nn.GELU(),
            nn.Linear(dim * mult, dim),
        )

    def forward(self, x):
        return self.net(x)


class Attention(nn.Module):
    """Multi-head self-attention; ``key_mask`` (B x N, True = attend) removes keys."""

    def __init__(self, dim, heads=4):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.to_qkv = nn.Linear(dim, dim * 3, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, key_mask=None):
        q, k, v = self.to_qkv(x).chunk(3, dim=-1)
        q, k, v = (rearrange(t, 'b n (h d) -> b h n d', h=self.heads) for t in (q, k, v))

        sim = einsum('b h i d, b h j d -> b h i j', q, k) * self.scale
        if exists(key_mask):
            mask = rearrange(key_mask, 'b j -> b 1 1 j')
            sim = sim.masked_fill(~mask, torch.finfo(sim.dtype).min)

        attn = sim.softmax(dim=-1)
        if exists(key_mask):
            # masked keys contribute exactly zero
            attn = attn.masked_fill(~mask, 0.0)

        out = einsum('b h i j, b h j d -> b h i d', attn, v)
        return self.to_out(rearrange(out, 'b h n d -> b n (h d)'))


class Transformer(nn.Module):
    def __init__(self, dim, depth, heads=4, ff_mult=4):
        super().__init__()
        self.layers = nn.ModuleList([
            nn.ModuleList([
                PreNorm(dim, Attention(dim, heads=heads)),
                PreNorm(dim, FeedForward(dim, mult=ff_mult)),
            ])
            for _ in range(depth)
        ])
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, key_mask=None):
        for attn, ff in self.layers:
            x = attn(x, key_mask=key_mask) + x
            x = ff(x) + x
        return self.norm(x)
