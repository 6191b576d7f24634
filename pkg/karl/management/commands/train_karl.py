from karl.experiments import train_karl_step
from karl.management.base import KarlCommand


class Command(KarlCommand):
    help = 'Trains KARL (training the base tokenizer first when its checkpoint is missing)'
    kind = 'train_karl'

    def execute_run(self, **options):
        cfg = self.load(options, **({'run_dir': options['out']} if options['out'] else {}))
        run = self.begin(cfg, cfg.resolved_run_dir(), cfg.model_digest)
        cfg.to_file(run.add(run.path / 'config.env'))
        path, metrics = train_karl_step(cfg, run)
        violations = sum(m['curriculum_violations'] for m in metrics)
        if violations:
            self.stdout.write(self.style.ERROR(f"{violations} curriculum violations logged"))
        return f"KARL checkpoint saved to {path} after {len(metrics)} epochs"
