import logging
import random

import numpy as np
import torch
from django.conf import settings

logger = logging.getLogger(__name__)


def get_device():
    device = settings.KARL_DEVICE
    if device.startswith('cuda') and not torch.cuda.is_available():
        logger.warning(f"KARL_DEVICE={device} requested but CUDA is unavailable, using cpu")
        return torch.device('cpu')
    return torch.device(device)


def set_seed(seed):
    """Seeds every generator in play and applies the deterministic-mode toggle."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if settings.KARL_DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)


def torch_generator(*keys):
    """A torch Generator seeded from a tuple of integers."""
    seed = int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
    return torch.Generator().manual_seed(seed)
