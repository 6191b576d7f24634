from pathlib import Path

from karl.experiments import evaluate, evaluation_data, load_trained
from karl.management.base import KarlCommand


def eps_list(value):
    return tuple(float(v) for v in value.split(',') if v.strip()) if value else None


class Command(KarlCommand):
    help = 'Evaluates a KARL checkpoint with fixed, variable or threshold token allocation'
    kind = 'eval_karl'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', default='', help='KARL checkpoint (defaults to the config run dir)')
        parser.add_argument('--dataset', default='synthetic', help="'synthetic' or an image folder")
        parser.add_argument('--mode', choices=['fixed', 'variable', 'threshold'], default='variable')
        parser.add_argument('--eps', type=eps_list, default=None, help='Comma separated eps values')

    def execute_run(self, **options):
        cfg = self.load(options)
        mode = options['mode']
        out = Path(options['out']) if options['out'] else cfg.resolved_run_dir() / f"eval-{mode}"
        run = self.begin(cfg, out, cfg.model_digest)
        params, base = load_trained(cfg, options['checkpoint'] or None)
        dataset = evaluation_data(cfg, options['dataset'])
        summary = evaluate(cfg, params, base, dataset, mode, run, eps_list=options['eps'])
        failed = [c['name'] for c in summary['checks'] if not c['passed']]
        for name in failed:
            self.stdout.write(self.style.WARNING(f"check not met: {name}"))
        return f"{mode} evaluation of {len(dataset)} images written to {out}"
