"""Shared plumbing for the KARL management commands.

Domain errors become ``CommandError`` with a distinct return code, and every run is
recorded in its run directory manifest and in the experiment ledger.
"""
import logging
import traceback

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from karl.config import load_config
from karl.constants import EXIT_CHECKPOINT_MISMATCH, EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_FAILURE
from karl.exceptions import CheckpointMismatch, ConfigError, DataError
from karl.models import ExperimentRun, log_activity
from karl.runs import RunDirectory

logger = logging.getLogger('karl')

RETURN_CODES = (
    (ConfigError, EXIT_CONFIG_ERROR),
    (DataError, EXIT_DATA_ERROR),
    (CheckpointMismatch, EXIT_CHECKPOINT_MISMATCH),
)


class KarlCommand(BaseCommand):
    kind = ''

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment config file (key = value)')
        parser.add_argument('--out', default='', help='Output directory')

    def handle(self, *args, **options):
        self.run = None
        self.record = None
        try:
            message = self.execute_run(**options)
        except Exception as exc:
            code = next((c for cls, c in RETURN_CODES if isinstance(exc, cls)), EXIT_FAILURE)
            if code == EXIT_FAILURE:
                logger.error(traceback.format_exc())
            self.finish('Failed', str(exc))
            self.stdout.write(self.style.ERROR(f"{self.kind} failed: {exc}"))
            raise CommandError(str(exc), returncode=code) from exc
        self.finish('Completed', message)
        self.stdout.write(self.style.SUCCESS(message))

    def execute_run(self, **options):
        raise NotImplementedError

    def load(self, options, **overrides):
        return load_config(options['config'], **overrides)

    def begin(self, cfg, path, digest):
        """Opens the run directory and its ledger entry."""
        self.run = RunDirectory(path, self.kind, digest).start()
        try:
            self.record = ExperimentRun.objects.create(
                kind=self.kind, name=cfg.name, config_digest=digest,
                run_dir=str(path), status='Running',
            )
        except DatabaseError as exc:
            logger.warning(f"Experiment ledger unavailable: {exc}")
        return self.run

    def finish(self, status, message):
        if self.run is not None:
            if status == 'Completed':
                self.run.complete()
            else:
                self.run.fail(message)
        if self.record is not None:
            self.record.status = status
            self.record.log = message
            self.record.finished_at = timezone.now()
            try:
                self.record.save()
                log_activity(self.kind, f"{self.record.name}: {status}")
            except DatabaseError as exc:
                logger.warning(f"Could not update experiment ledger: {exc}")
