from karl.experiments import train_base_step
from karl.management.base import KarlCommand


class Command(KarlCommand):
    help = 'Trains the base patch tokenizer for a config and saves a frozen checkpoint'
    kind = 'train_base'

    def execute_run(self, **options):
        cfg = self.load(options, **({'run_dir': options['out']} if options['out'] else {}))
        run = self.begin(cfg, cfg.resolved_run_dir(), cfg.base_digest)
        cfg.to_file(run.add(run.path / 'config.env'))
        base, path = train_base_step(cfg, run)
        return f"Base tokenizer saved to {path} (final l1 {base.loss_history[-1]:.4f})" \
            if base.loss_history else f"Base tokenizer saved to {path}"
