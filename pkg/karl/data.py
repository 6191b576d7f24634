"""Dataset ingestion and the synthetic complexity suite."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset

from .constants import SYNTHETIC_KINDS
from .exceptions import DataError, InputError
from .types import Image
from .utils import torch_generator

logger = logging.getLogger(__name__)

KIND_NAMES = tuple(kind for kind, _ in SYNTHETIC_KINDS)
SPLIT_KEYS = {'train': 0, 'val': 1}
RASTER_SUFFIXES = {'.png', '.jpg', '.jpeg', '.bmp', '.gif', '.tif', '.tiff', '.webp', '.ppm'}


@dataclass(frozen=True)
class DatasetSpec:
    source: str = 'synthetic'
    split: str = 'train'
    resolution: int = 32
    seed: int = 0
    size: int = 512
    channels: int = 3
    path: str = ''
    kinds: tuple = KIND_NAMES
    val_fraction: float = 0.1
    noise_amplitude: tuple = (1.0, 1.0)
    mandelbrot_iterations: int = 64
    mandelbrot_viewport: tuple = (-2.0, 0.6, -1.2, 1.2)
    checker_cells: tuple = field(default=(2, 4, 8))

    @classmethod
    def from_config(cls, cfg, split='train', source=None, path=None):
        return cls(
            source=source or cfg.dataset_source,
            split=split,
            resolution=cfg.image_size,
            seed=cfg.seed,
            size=cfg.synthetic_per_kind,
            channels=cfg.channels,
            path=path if path is not None else cfg.dataset_path,
            kinds=tuple(cfg.synthetic_kinds),
            val_fraction=cfg.val_fraction,
            noise_amplitude=tuple(cfg.noise_amplitude),
            mandelbrot_iterations=cfg.mandelbrot_iterations,
            mandelbrot_viewport=tuple(cfg.mandelbrot_viewport),
        )

    def split_size(self):
        """Images per family in this split; val takes val_fraction of size."""
        n_val = max(1, int(round(self.size * self.val_fraction)))
        return n_val if self.split == 'val' else max(1, self.size - n_val)


# --- folder ingestion ---

def _center_crop_resize(img, resolution, channels):
    img = img.convert('L' if channels == 1 else 'RGB')
    width, height = img.size
    side = min(width, height)
    left, top = (width - side) // 2, (height - side) // 2
    img = img.crop((left, top, left + side, top + side))
    img = img.resize((resolution, resolution), PILImage.BICUBIC)
    pixels = np.asarray(img, dtype=np.float32) / 255.0
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return np.clip(pixels, 0.0, 1.0)


def split_files(files, spec):
    """Deterministic train/val assignment of a sorted file list."""
    files = sorted(files)
    order = np.random.default_rng(spec.seed).permutation(len(files))
    n_val = int(round(len(files) * spec.val_fraction))
    val_idx = set(order[:n_val].tolist())
    chosen = [f for i, f in enumerate(files) if (i in val_idx) == (spec.split == 'val')]
    return chosen


def load_folder(path, spec):
    """Yields Images from a folder of raster files, center-cropped and resized."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"Dataset folder not found: {root}")
    files = [p for p in root.iterdir() if p.suffix.lower() in RASTER_SUFFIXES]
    if not files:
        raise DataError(f"No image files in {root}")

    for file in split_files(files, spec):
        try:
            with PILImage.open(file) as img:
                pixels = _center_crop_resize(img, spec.resolution, spec.channels)
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning(f"Skipping unreadable image {file.name}: {exc}")
            continue
        yield Image(pixels=pixels, id=file.stem)


# --- synthetic suite ---

def _rng(spec, kind, index):
    return np.random.default_rng([spec.seed, KIND_NAMES.index(kind), SPLIT_KEYS[spec.split], index])


def _constant(rng, spec):
    level = rng.uniform(0.1, 0.9)
    return np.full((spec.resolution, spec.resolution, spec.channels), level, dtype=np.float32)


def _gradient(rng, spec):
    lo, hi = sorted(rng.uniform(0.0, 1.0, size=2))
    angle = rng.uniform(0.0, 2 * np.pi)
    axis = np.linspace(-1.0, 1.0, spec.resolution)
    yy, xx = np.meshgrid(axis, axis, indexing='ij')
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-8)
    plane = lo + (hi - lo) * ramp
    return np.repeat(plane[:, :, None], spec.channels, axis=2).astype(np.float32)


def _checkerboard(rng, spec):
    cells = [c for c in spec.checker_cells if spec.resolution % c == 0 and c < spec.resolution]
    cell = int(rng.choice(cells)) if cells else 1
    a = rng.uniform(0.0, 0.45)
    b = rng.uniform(0.55, 1.0)
    if rng.random() < 0.5:
        a, b = b, a
    idx = np.arange(spec.resolution) // cell
    board = (idx[:, None] + idx[None, :]) % 2
    plane = np.where(board == 0, a, b)
    return np.repeat(plane[:, :, None], spec.channels, axis=2).astype(np.float32)


def _noise(rng, spec):
    lo, hi = spec.noise_amplitude
    amplitude = rng.uniform(lo, hi) if hi > lo else lo
    u = rng.random((spec.resolution, spec.resolution, spec.channels))
    return np.clip(0.5 + amplitude * (u - 0.5), 0.0, 1.0).astype(np.float32)


def _mandelbrot(rng, spec):
    x0, x1, y0, y1 = spec.mandelbrot_viewport
    jitter = 0.05 * min(x1 - x0, y1 - y0)
    dx, dy = rng.uniform(-jitter, jitter, size=2)
    xs = np.linspace(x0, x1, spec.resolution) + dx
    ys = np.linspace(y0, y1, spec.resolution) + dy
    c = xs[None, :] + 1j * ys[:, None]
    z = np.zeros_like(c)
    escape = np.full(c.shape, spec.mandelbrot_iterations, dtype=np.float64)
    alive = np.ones(c.shape, dtype=bool)
    for step in range(spec.mandelbrot_iterations):
        z[alive] = z[alive] ** 2 + c[alive]
        escaped = alive & (np.abs(z) > 2.0)
        escape[escaped] = step
        alive &= ~escaped
    level = escape / spec.mandelbrot_iterations
    phases = rng.uniform(0.0, 2 * np.pi, size=spec.channels)
    planes = [0.5 + 0.5 * np.cos(2 * np.pi * level + phase) for phase in phases]
    return np.clip(np.stack(planes, axis=2), 0.0, 1.0).astype(np.float32)


GENERATORS = {
    'constant': _constant,
    'gradient': _gradient,
    'checkerboard': _checkerboard,
    'noise': _noise,
    'mandelbrot': _mandelbrot,
}


def make_synthetic(kind, spec):
    """Yields the synthetic images of one family for spec.split."""
    if kind not in GENERATORS:
        raise InputError(f"Unknown synthetic kind '{kind}'")
    for index in range(spec.split_size()):
        pixels = GENERATORS[kind](_rng(spec, kind, index), spec)
        yield Image(pixels=pixels, id=f"{kind}-{spec.split}-{index:05d}")


def load_dataset(spec):
    """Materialises the images described by a DatasetSpec, in deterministic order."""
    if spec.source == 'folder':
        images = list(load_folder(spec.path, spec))
    else:
        images = [img for kind in spec.kinds for img in make_synthetic(kind, spec)]
    if not images:
        raise DataError(f"Dataset is empty ({spec.source}, split={spec.split})")
    logger.info(f"Loaded {len(images)} {spec.split} images from {spec.source}")
    return images


# --- batching ---

class ImageDataset(Dataset):

    def __init__(self, images):
        self.images = list(images)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, index):
        img = self.images[index]
        return img.as_tensor(), img.id


def _seed_worker(worker_id):
    seed = torch.initial_seed() % 2 ** 32
    np.random.seed(seed)


def make_loader(images, batch_size, seed=0, epoch=0, num_workers=0, shuffle=True):
    """DataLoader whose order and worker randomness derive from (seed, epoch, worker_id)."""
    return DataLoader(
        ImageDataset(images),
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        worker_init_fn=_seed_worker if num_workers else None,
        generator=torch_generator(seed, epoch),
    )


def batches(images, batch_size):
    """Yields (B x C x H x W tensor, ids) in dataset order."""
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        yield torch.stack([img.as_tensor() for img in chunk]), [img.id for img in chunk]
