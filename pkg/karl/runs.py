"""Run directories: the manifest, the metrics log and line-delimited result files."""
import json
import logging
import math
from pathlib import Path

from django.utils import timezone

logger = logging.getLogger(__name__)


def _clean(value):
    """JSON-safe copy: tuples become lists, non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + '\n')
    return path


def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as fh:
        for row in rows:
            fh.write(json.dumps(_clean(row), sort_keys=True) + '\n')
    return path


def read_jsonl(path):
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


class RunDirectory:
    """A run directory and its manifest.json."""

    def __init__(self, path, command, digest):
        self.path = Path(path)
        self.command = command
        self.digest = digest
        self.files = []

    @property
    def manifest_path(self):
        return self.path / 'manifest.json'

    def read_manifest(self):
        if not self.manifest_path.is_file():
            return {}
        return json.loads(self.manifest_path.read_text())

    def is_completed(self):
        manifest = self.read_manifest()
        return manifest.get('status') == 'completed' and manifest.get('digest') == self.digest

    def start(self):
        self.path.mkdir(parents=True, exist_ok=True)
        self.started_at = timezone.now().isoformat()
        self._write('running')
        return self

    def add(self, path):
        path = Path(path)
        name = str(path.relative_to(self.path)) if path.is_relative_to(self.path) else str(path)
        if name not in self.files:
            self.files.append(name)
        return path

    def complete(self, **extra):
        self._write('completed', finished=True, **extra)

    def fail(self, error):
        self._write('failed', finished=True, error=str(error))

    def _write(self, status, finished=False, **extra):
        manifest = {
            'command': self.command,
            'digest': self.digest,
            'status': status,
            'files': self.files,
            'started_at': getattr(self, 'started_at', None),
            'finished_at': timezone.now().isoformat() if finished else None,
        }
        manifest.update(extra)
        write_json(self.manifest_path, manifest)


class MetricsLog:
    """metrics.jsonl writer used by the training loop."""

    def __init__(self, path, digest):
        self.path = Path(path)
        self.digest = digest
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text('')

    def _append(self, row):
        with self.path.open('a') as fh:
            fh.write(json.dumps(_clean(row), sort_keys=True) + '\n')

    def iteration(self, stage, epoch, iteration, records):
        first = records[0].losses
        self._append({
            'type': 'iteration',
            'stage': stage,
            'epoch': epoch,
            'iteration': iteration,
            'image_ids': [r.image_id for r in records],
            'T': [r.T for r in records],
            'delta_T': [r.delta_T for r in records],
            'eps0': [r.eps0 for r in records],
            'eps_cond': [r.eps_cond.value for r in records],
            'losses': {
                'eic': {str(r.T): r.losses['eic'] for r in records},
                'ltc': first['ltc'],
                'total': first['total'],
            },
            'digest': self.digest,
        })

    def epoch(self, summary):
        self._append({'type': 'epoch', 'digest': self.digest, **summary})

    def read(self):
        return read_jsonl(self.path)
