"""Experiment configuration.

Experiment settings are a flat ``key = value`` file read through python-decouple,
the same format the project settings use for ``.env``. Lists are comma separated.
Only the file is read: environment variables never override an experiment value,
so a run is reproducible from its config file alone.
"""
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from decouple import Config, Csv, RepositoryEnv, Undefined, UndefinedValueError, undefined
from django.conf import settings

from .constants import CONTINUOUS, DEFAULT_LOSS_TABLE, DISCRETE, HALT_THRESHOLD
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

BASE_FIELDS = (
    'image_size', 'channels', 'patch_size', 'base_dim', 'base_mode',
    'base_codebook_size', 'base_hidden',
)

MODEL_FIELDS = BASE_FIELDS + (
    'token_dim', 'encoder_width', 'encoder_depth', 'decoder_width', 'decoder_depth',
    'heads', 'mode_1d', 'codebook_size', 'quant_dim', 't_max', 'budget_step', 'loss_table',
)


def _bool(value):
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ('1', 'true', 'yes', 'on')


@dataclass(frozen=True)
class TrainConfig:
    name: str = 'karl'
    seed: int = 0
    image_size: int = 32
    channels: int = 3

    # base tokenizer
    patch_size: int = 4
    base_dim: int = 16
    base_mode: str = CONTINUOUS
    base_codebook_size: int = 256
    base_hidden: int = 64
    base_epochs: int = 10
    base_lr: float = 2e-3

    # KARL encoder / decoder
    token_dim: int = 32
    encoder_width: int = 64
    encoder_depth: int = 2
    decoder_width: int = 64
    decoder_depth: int = 2
    heads: int = 4
    mode_1d: str = DISCRETE
    codebook_size: int = 1024
    quant_dim: int = 12
    t_max: int = 64
    budget_step: int = 16
    threshold: float = HALT_THRESHOLD
    loss_table: tuple = DEFAULT_LOSS_TABLE

    # optimisation
    beta: float = 0.25
    lam: float = 1.0
    lr: float = 3e-4
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    batch_size: int = 16
    stage1_epochs: int = 20
    stage2_epochs: int = 5

    # data
    dataset_source: str = 'synthetic'
    dataset_path: str = ''
    synthetic_kinds: tuple = ('constant', 'gradient', 'checkerboard', 'noise', 'mandelbrot')
    synthetic_per_kind: int = 512
    val_fraction: float = 0.1
    num_workers: int = 0
    noise_amplitude: tuple = (1.0, 1.0)
    mandelbrot_iterations: int = 64
    mandelbrot_viewport: tuple = (-2.0, 0.6, -1.2, 1.2)

    # outputs
    run_dir: str = ''
    base_checkpoint: str = ''
    checkpoint: str = ''

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        for mode_name in ('base_mode', 'mode_1d'):
            if getattr(self, mode_name) not in (CONTINUOUS, DISCRETE):
                raise ConfigError(f"{mode_name} must be '{CONTINUOUS}' or '{DISCRETE}'")
        if self.budget_step <= 0 or self.t_max < self.budget_step:
            raise ConfigError("budget grid is empty: need 0 < budget_step <= t_max")
        if self.t_max % self.budget_step:
            raise ConfigError(f"t_max {self.t_max} is not a multiple of budget_step {self.budget_step}")
        table = tuple(float(v) for v in self.loss_table)
        if not table or table[0] != 0.0 or any(b <= a for a, b in zip(table, table[1:])):
            raise ConfigError("loss_table must be strictly ascending and start at 0.0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.encoder_width % self.heads or self.decoder_width % self.heads:
            raise ConfigError("encoder_width and decoder_width must be divisible by heads")
        if self.codebook_size < 1 or self.base_codebook_size < 1:
            raise ConfigError("codebook sizes must be positive")
        if self.dataset_source not in ('synthetic', 'folder'):
            raise ConfigError("dataset_source must be 'synthetic' or 'folder'")
        object.__setattr__(self, 'loss_table', table)

    # --- derived values ---

    @property
    def grid_size(self):
        """Number of base grid positions G."""
        return (self.image_size // self.patch_size) ** 2

    @property
    def budget_grid(self):
        return tuple(range(self.budget_step, self.t_max + 1, self.budget_step))

    @property
    def base_digest(self):
        return self._digest(BASE_FIELDS)

    @property
    def model_digest(self):
        return self._digest(MODEL_FIELDS)

    def _digest(self, names):
        payload = {name: getattr(self, name) for name in names}
        blob = json.dumps(payload, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    def resolved_run_dir(self):
        if self.run_dir:
            return Path(self.run_dir)
        return Path(settings.KARL_RUNS_ROOT) / f"{self.name}-{self.model_digest[:8]}"

    def resolved_base_checkpoint(self):
        return Path(self.base_checkpoint) if self.base_checkpoint else self.resolved_run_dir() / 'base.ckpt'

    def resolved_checkpoint(self):
        return Path(self.checkpoint) if self.checkpoint else self.resolved_run_dir() / 'karl.ckpt'

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}

    def to_file(self, path):
        """Writes the config back out in the flat key = value format."""
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, (tuple, list)):
                value = ','.join(str(v) for v in value)
            lines.append(f"{key}={value}")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text('\n'.join(lines) + '\n')
        return Path(path)


class FileConfig(Config):
    """decouple Config reading only its file; environment variables do not override it."""

    def get(self, option, default=undefined, cast=undefined):
        if option in self.repository:
            value = self.repository[option]
        elif isinstance(default, Undefined):
            raise UndefinedValueError(f"{option} not found in the config file and has no default.")
        else:
            value = default
        if isinstance(cast, Undefined):
            cast = self._cast_do_nothing
        elif cast is bool:
            cast = self._cast_boolean
        return cast(value)


def _cast_for(f):
    default = f.default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        if default and isinstance(default[0], str):
            return Csv(post_process=tuple)
        return Csv(cast=float, post_process=tuple)
    return str


FIELD_CASTS = {f.name: _cast_for(f) for f in dataclasses.fields(TrainConfig) if f.init}


def load_config(path, **overrides):
    """Reads a flat key = value experiment config into a TrainConfig."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    repository = RepositoryEnv(str(path))
    unknown = sorted(set(repository.data) - set(FIELD_CASTS))
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")

    source = FileConfig(repository)
    values = {}
    for key in repository.data:
        try:
            values[key] = source(key, cast=FIELD_CASTS[key])
        except (ValueError, UndefinedValueError) as exc:
            raise ConfigError(f"Bad value for '{key}' in {path}: {exc}") from exc
    values.update(overrides)

    try:
        cfg = TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    logger.debug(f"Loaded config {path} (digest {cfg.model_digest[:8]})")
    return cfg
