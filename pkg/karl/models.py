from django.db import models


class ActivityLog(models.Model):
    action = models.CharField(max_length=255)
    timestamp = models.DateTimeField(auto_now_add=True)
    details = models.TextField(blank=True, null=True)

    def __str__(self):
        return f"{self.timestamp} - {self.action}"


def log_activity(action, details=""):
    ActivityLog.objects.create(action=action, details=details)


class ExperimentRun(models.Model):
    """Ledger entry for one command invocation (train, eval, analysis or one sweep cell)."""
    KIND_CHOICES = [
        ('train_base', 'Base tokenizer training'),
        ('train_karl', 'KARL training'),
        ('eval_karl', 'Evaluation'),
        ('kc_analysis', 'KC analysis'),
        ('sweep', 'Sweep cell'),
    ]
    STATUS_CHOICES = [
        ('Pending', 'Pending'),
        ('Running', 'Running'),
        ('Completed', 'Completed'),
        ('Failed', 'Failed'),
    ]

    kind = models.CharField(max_length=20, choices=KIND_CHOICES)
    name = models.CharField(max_length=255)
    config_digest = models.CharField(max_length=64)
    run_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=20, default='Pending', choices=STATUS_CHOICES)
    log = models.TextField(blank=True, null=True, help_text="Outcome lines and errors of the run")
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.kind} {self.name} ({self.status})"
