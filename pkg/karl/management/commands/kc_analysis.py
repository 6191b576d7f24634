from pathlib import Path

from karl.constants import DEFAULT_EPS
from karl.experiments import evaluation_data, kc_report, load_trained
from karl.management.base import KarlCommand


class Command(KarlCommand):
    help = 'Writes per-image complexity estimates, buckets and probes for one eps'
    kind = 'kc_analysis'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', default='', help='KARL checkpoint (defaults to the config run dir)')
        parser.add_argument('--dataset', default='synthetic', help="'synthetic' or an image folder")
        parser.add_argument('--eps', type=float, default=DEFAULT_EPS)
        parser.add_argument('--oracle', action='store_true', help='Add the exhaustive prefix search')
        parser.add_argument('--invariance', action='store_true', help='Compare t_hat at the smallest and largest budget')
        parser.add_argument('--bucket-width', type=int, default=None)

    def execute_run(self, **options):
        cfg = self.load(options)
        out = Path(options['out']) if options['out'] else cfg.resolved_run_dir() / f"kc-{options['eps']}"
        run = self.begin(cfg, out, cfg.model_digest)
        params, base = load_trained(cfg, options['checkpoint'] or None)
        dataset = evaluation_data(cfg, options['dataset'])
        summary = kc_report(cfg, params, base, dataset, run, options['eps'], oracle=options['oracle'],
                            invariance=options['invariance'], bucket_width=options['bucket_width'])
        return f"Mean t_hat {summary['mean_t_hat']:.2f} over {len(dataset)} images, written to {out}"
