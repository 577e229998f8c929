# Generated by Django 5.2.8 on 2026-10-18 10:12

import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('name', models.CharField(blank=True, max_length=200)),
                ('config', models.JSONField(help_text='ExperimentConfig complète après fusion des overrides')),
                ('status', models.CharField(choices=[('pending', 'En attente'), ('processing', 'En cours'), ('success', 'Terminé'), ('error', 'Erreur')], default='pending', max_length=20)),
                ('error_message', models.TextField(blank=True)),
                ('checkpoint_dir', models.CharField(blank=True, max_length=500)),
                ('best_checkpoint', models.CharField(blank=True, max_length=500)),
                ('last_checkpoint', models.CharField(blank=True, max_length=500)),
                ('history_path', models.CharField(blank=True, max_length=500)),
                ('best_val_f1', models.FloatField(blank=True, null=True)),
                ('parent_steps', models.PositiveIntegerField(default=0)),
                ('child_steps', models.PositiveIntegerField(default=0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('checkpoint', models.CharField(max_length=500)),
                ('manifest', models.CharField(max_length=500)),
                ('split', models.CharField(blank=True, max_length=20)),
                ('report', models.JSONField(default=dict)),
                ('f1', models.FloatField(blank=True, null=True)),
                ('kendall_tau', models.FloatField(blank=True, null=True)),
                ('spearman_rho', models.FloatField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('training_run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluations', to='summarization.trainingrun')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
