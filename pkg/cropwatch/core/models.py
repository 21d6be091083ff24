from django.db import models


class RunRecord(models.Model):
    STATUS_CHOICES = (
        ('SUCCESS', 'Success'),
        ('FAILED', 'Failed'),
    )

    command = models.CharField(max_length=50)
    seed = models.CharField(max_length=20)
    config_digest = models.CharField(max_length=16)
    output_dir = models.CharField(max_length=500)
    input_digests = models.JSONField(default=dict, blank=True)
    output_digests = models.JSONField(default=dict, blank=True)
    wall_time_seconds = models.FloatField(default=0.0)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='SUCCESS')
    message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['command', 'created_at'], name='core_runrec_command_5b8f1e_idx'),
            models.Index(fields=['config_digest'], name='core_runrec_config__a41c2d_idx'),
        ]

    def __str__(self):
        return f"{self.command} seed={self.seed} ({self.status})"
