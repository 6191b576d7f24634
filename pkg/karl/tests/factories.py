"""Tiny configurations, models and images shared by the test modules."""
import dataclasses

import torch

from karl.base_tokenizer import BaseTokenizer
from karl.config import TrainConfig
from karl.data import DatasetSpec, make_synthetic
from karl.model import KarlModel


def tiny_config(**overrides):
    values = dict(
        name='tiny',
        image_size=8,
        channels=3,
        patch_size=4,
        base_dim=4,
        base_hidden=8,
        base_epochs=1,
        token_dim=8,
        encoder_width=16,
        encoder_depth=1,
        decoder_width=16,
        decoder_depth=1,
        heads=2,
        codebook_size=8,
        quant_dim=4,
        t_max=4,
        budget_step=2,
        batch_size=8,
        lr=1e-3,
        stage1_epochs=1,
        stage2_epochs=1,
        synthetic_per_kind=6,
    )
    values.update(overrides)
    return TrainConfig(**values)


def tiny_base(cfg, seed=0):
    torch.manual_seed(seed)
    return BaseTokenizer.from_config(cfg).requires_grad_(False).eval()


def tiny_model(cfg, base, seed=0):
    torch.manual_seed(seed)
    return KarlModel.from_config(cfg, base)


def tiny_images(cfg, kind='gradient', split='train', size=None):
    spec = DatasetSpec.from_config(cfg, split)
    if size is not None:
        spec = dataclasses.replace(spec, size=size)
    return list(make_synthetic(kind, spec))


def tiny_suite(cfg, split='val'):
    return [img for kind in cfg.synthetic_kinds for img in make_synthetic(kind, DatasetSpec.from_config(cfg, split))]


def write_config(path, **values):
    path.write_text(''.join(f"{key}={value}\n" for key, value in values.items()))
    return path


TINY_FILE_VALUES = dict(
    name='tiny',
    image_size=8,
    patch_size=4,
    base_dim=4,
    base_hidden=8,
    base_epochs=1,
    token_dim=8,
    encoder_width=16,
    encoder_depth=1,
    decoder_width=16,
    decoder_depth=1,
    heads=2,
    codebook_size=8,
    quant_dim=4,
    t_max=4,
    budget_step=2,
    batch_size=8,
    stage1_epochs=1,
    stage2_epochs=1,
    synthetic_per_kind=6,
)
