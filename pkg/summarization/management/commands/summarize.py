import json

from django.core.management.base import BaseCommand

from summarization.services.checkpoints import load_checkpoint
from summarization.services.dataset import load_manifest, load_sample
from summarization.services.summarizer import (
    SUMMARY_KNAPSACK,
    SUMMARY_TOPK,
    summarize_video,
    summary_to_dict,
    write_scores_csv,
    write_summary_json,
)

from ._errors import command_errors


class Command(BaseCommand):
    help = "Résume une vidéo : frames sélectionnées, plans et phrases clés en JSON"

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--video-id', required=True)
        parser.add_argument('--mode', choices=[SUMMARY_KNAPSACK, SUMMARY_TOPK], default=SUMMARY_KNAPSACK)
        parser.add_argument('--budget', type=float, default=0.15, help="Budget du sac à dos (fraction de N)")
        parser.add_argument('--fraction', type=float, default=0.55, help="Fraction de frames en mode topk")
        parser.add_argument('--sentence-threshold', type=float, default=0.5)
        parser.add_argument('--sentence-count', type=int, default=None)
        parser.add_argument('--kts-max-change-points', type=int, default=None)
        parser.add_argument('--kts-penalty', type=float, default=1.0)
        parser.add_argument('--output', help="Fichier JSON (sinon sortie standard)")
        parser.add_argument('--scores-csv', help="CSV des scores par frame")

    def handle(self, *args, **options):
        with command_errors():
            loaded = load_checkpoint(options['checkpoint'])
            sample = load_sample(load_manifest(options['manifest']), options['video_id'])
            selection = summarize_video(
                loaded.model,
                sample,
                mode=options['mode'],
                budget_ratio=options['budget'],
                fraction=options['fraction'],
                sentence_threshold=options['sentence_threshold'],
                sentence_count=options['sentence_count'],
                kts_max_change_points=options['kts_max_change_points'],
                kts_penalty=options['kts_penalty'],
            )
            if options.get('scores_csv'):
                write_scores_csv(options['scores_csv'], selection)
            if options.get('output'):
                write_summary_json(options['output'], sample, selection)

        if options.get('output'):
            self.stdout.write(self.style.SUCCESS(
                f"Résumé de '{sample.video_id}' écrit dans {options['output']} "
                f"({int(selection.selected_frames.sum())}/{sample.n_frames} frames)"
            ))
        else:
            self.stdout.write(json.dumps(summary_to_dict(sample, selection), indent=2, ensure_ascii=False))
