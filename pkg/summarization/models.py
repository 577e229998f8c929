import uuid

from django.db import models


class TrainingRun(models.Model):
    """Exécution de la commande train : configuration, statut et artefacts produits"""
    STATUS_PENDING = 'pending'
    STATUS_PROCESSING = 'processing'
    STATUS_SUCCESS = 'success'
    STATUS_ERROR = 'error'
    STATUS_CHOICES = [
        (STATUS_PENDING, 'En attente'),
        (STATUS_PROCESSING, 'En cours'),
        (STATUS_SUCCESS, 'Terminé'),
        (STATUS_ERROR, 'Erreur'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    name = models.CharField(max_length=200, blank=True)
    config = models.JSONField(help_text="ExperimentConfig complète après fusion des overrides")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=STATUS_PENDING)
    error_message = models.TextField(blank=True)
    checkpoint_dir = models.CharField(max_length=500, blank=True)
    best_checkpoint = models.CharField(max_length=500, blank=True)
    last_checkpoint = models.CharField(max_length=500, blank=True)
    history_path = models.CharField(max_length=500, blank=True)
    best_val_f1 = models.FloatField(null=True, blank=True)
    parent_steps = models.PositiveIntegerField(default=0)
    child_steps = models.PositiveIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"TrainingRun<{self.id}> - {self.status}"


class EvaluationRun(models.Model):
    """Évaluation d'un checkpoint sur un split"""
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    checkpoint = models.CharField(max_length=500)
    manifest = models.CharField(max_length=500)
    split = models.CharField(max_length=20, blank=True)
    report = models.JSONField(default=dict)
    f1 = models.FloatField(null=True, blank=True)
    kendall_tau = models.FloatField(null=True, blank=True)
    spearman_rho = models.FloatField(null=True, blank=True)
    training_run = models.ForeignKey(
        TrainingRun,
        on_delete=models.SET_NULL,
        null=True,
        blank=True,
        related_name='evaluations',
    )
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"EvaluationRun<{self.id}> - {self.split} F1={self.f1}"
