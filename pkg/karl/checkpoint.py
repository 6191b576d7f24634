"""Checkpoint files for the base tokenizer and the KARL model.

A checkpoint stores the state dict together with the format version, its kind and
the config digest it was trained under; loading against a different config fails.
"""
import logging
from pathlib import Path

import torch

from .base_tokenizer import BaseTokenizer
from .constants import CHECKPOINT_FORMAT_VERSION
from .exceptions import CheckpointMismatch
from .model import KarlModel
from .utils import get_device

logger = logging.getLogger(__name__)

BASE_KIND = 'base'
KARL_KIND = 'karl'


def save_checkpoint(path, kind, module, config, digest, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'kind': kind,
        'digest': digest,
        'config': {k: list(v) if isinstance(v, tuple) else v for k, v in config.as_dict().items()},
        'state_dict': module.state_dict(),
        'extra': extra or {},
    }
    torch.save(payload, path)
    logger.info(f"Saved {kind} checkpoint to {path}")
    return path


def read_checkpoint(path, kind, digest):
    """Loads a checkpoint payload and checks version, kind and digest."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointMismatch(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as exc:
        raise CheckpointMismatch(f"Unreadable checkpoint {path}: {exc}") from exc

    if payload.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatch(
            f"{path} has format version {payload.get('format_version')}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    if payload.get('kind') != kind:
        raise CheckpointMismatch(f"{path} holds a '{payload.get('kind')}' checkpoint, expected '{kind}'")
    if payload.get('digest') != digest:
        raise CheckpointMismatch(
            f"{path} was trained under config digest {str(payload.get('digest'))[:8]}, "
            f"this config has {digest[:8]}"
        )
    return payload


def save_base(path, base, config):
    return save_checkpoint(path, BASE_KIND, base, config, config.base_digest,
                           extra={'loss_history': list(base.loss_history)})


def load_base(path, config):
    """A frozen BaseTokenizer restored from ``path``."""
    payload = read_checkpoint(path, BASE_KIND, config.base_digest)
    base = BaseTokenizer.from_config(config)
    base.load_state_dict(payload['state_dict'])
    base.loss_history = list(payload['extra'].get('loss_history', []))
    base.requires_grad_(False)
    return base.to(get_device()).eval()


def save_karl(path, params, config, metrics=None):
    return save_checkpoint(path, KARL_KIND, params, config, config.model_digest,
                           extra={'metrics': metrics or []})


def load_karl(path, config, base):
    payload = read_checkpoint(path, KARL_KIND, config.model_digest)
    params = KarlModel.from_config(config, base)
    params.load_state_dict(payload['state_dict'])
    # the halting threshold is an inference knob, not part of the digest
    params.threshold = config.threshold
    return params.to(get_device()).eval()
