import json

from django.core.management.base import BaseCommand

from summarization.services.experiment import (
    EVAL_FIELDS,
    add_model_arguments,
    build_eval_protocol,
    run_evaluation,
)
from summarization.services.pydantic_models import ExperimentConfig

from ._errors import command_errors


class Command(BaseCommand):
    help = "Évalue un checkpoint sur un split (F1, tau, rho, MAP, ROUGE, cosinus)"

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--split', default='test', choices=['train', 'val', 'test'])
        parser.add_argument('--output', help="Rapport JSON")
        parser.add_argument('--csv', help="Tableau CSV des mesures par vidéo")
        add_model_arguments(parser, ExperimentConfig, EVAL_FIELDS)

    def handle(self, *args, **options):
        with command_errors():
            protocol = build_eval_protocol(options)
            replay_threshold = options['replay_threshold'] if options.get('replay_threshold') is not None else 0.15
            evaluation, report = run_evaluation(
                options['checkpoint'], options['manifest'], protocol, options['split'], replay_threshold,
            )
            if options.get('output'):
                report.write_json(options['output'])
            if options.get('csv'):
                report.write_csv(options['csv'])

        self.stdout.write(json.dumps(report.to_dict()['aggregates'], indent=2))
        self.stdout.write(self.style.SUCCESS(f"Évaluation {evaluation.id} enregistrée ({len(report.per_video)} vidéos)"))
