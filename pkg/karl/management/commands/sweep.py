from pathlib import Path

from django.core.management.base import CommandError

from karl.constants import EXIT_FAILURE
from karl.management.base import KarlCommand
from karl.sweeps import load_sweep_spec, run_sweep


class Command(KarlCommand):
    help = 'Trains and evaluates one config per sweep value and writes the combined curves'
    kind = 'sweep'

    def add_arguments(self, parser):
        parser.add_argument('--spec', required=True, help='Sweep spec file (config, axis, values)')
        parser.add_argument('--out', default='', help='Output directory')

    def execute_run(self, **options):
        spec = load_sweep_spec(options['spec'])
        out = Path(options['out']) if options['out'] else spec.config.resolved_run_dir().parent / \
            f"sweep-{spec.config.name}-{spec.axis}"
        results, failures = run_sweep(spec, out)
        for value, error in failures.items():
            self.stdout.write(self.style.ERROR(f"cell {value} failed: {error}"))
        if not results:
            raise CommandError("every sweep cell failed", returncode=EXIT_FAILURE)
        return f"Sweep over {spec.axis}: {len(results)} cells done, {len(failures)} failed; see {out}"
