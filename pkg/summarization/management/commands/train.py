from django.core.management.base import BaseCommand

from summarization.services.experiment import (
    add_model_arguments,
    build_experiment_config,
    load_config_file,
    overrides_from_options,
    run_training,
)
from summarization.services.pydantic_models import ExperimentConfig

from ._errors import command_errors


class Command(BaseCommand):
    help = (
        "Entraîne le modèle hiérarchique (étapes enfant / parent). "
        "Chaque clé du fichier --config est aussi un flag --kebab-case qui la surcharge."
    )

    def add_arguments(self, parser):
        parser.add_argument('--config', help="Fichier JSON d'expérience (voir configs/)")
        parser.add_argument('--name', default='', help="Nom du run en base")
        add_model_arguments(parser, ExperimentConfig)

    def handle(self, *args, **options):
        with command_errors():
            base = load_config_file(options['config']) if options.get('config') else {}
            config = build_experiment_config(base, overrides_from_options(options, ExperimentConfig.model_fields))
            run = run_training(config, name=options['name'])

        best = f"{run.best_val_f1:.4f}" if run.best_val_f1 is not None else 'n/a'
        self.stdout.write(self.style.SUCCESS(
            f"Run {run.id} terminé : {run.child_steps} pas enfant, {run.parent_steps} pas parent, "
            f"meilleur F1 val={best}"
        ))
        self.stdout.write(f"Checkpoints : {run.best_checkpoint} / {run.last_checkpoint}")
        self.stdout.write(f"Historique : {run.history_path}")
