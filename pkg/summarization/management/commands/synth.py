from django.core.management.base import BaseCommand

from summarization.services.synthetic import synth_generate

from ._errors import command_errors


class Command(BaseCommand):
    help = 'Génère un jeu de vidéos pédagogiques synthétiques (features, sous-titres, scores de relecture)'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help="Dossier de sortie (manifest.json + videos/)")
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--videos', type=int, default=8, help="Nombre de vidéos")
        parser.add_argument('--steps', type=int, default=4, help="Étapes par vidéo (= sous-titres)")
        parser.add_argument('--frames-per-step', type=int, default=5)
        parser.add_argument('--video-dim', type=int, default=16, help="D_v")
        parser.add_argument('--text-dim', type=int, default=16, help="D_t")
        parser.add_argument('--important-steps', type=int, default=None, help="Défaut : steps // 2")
        parser.add_argument('--noise', type=float, default=0.1)
        parser.add_argument('--importance-signal', type=float, default=1.0,
                            help="Amplitude de la direction cachée des étapes importantes")
        parser.add_argument('--replay-spread', type=float, default=0.5,
                            help="Étalement des frames le long de la direction de relecture")
        parser.add_argument('--step-types', type=int, default=None, help="Taille du vocabulaire d'étapes")
        parser.add_argument('--val-fraction', type=float, default=0.0)
        parser.add_argument('--test-fraction', type=float, default=0.0)

    def handle(self, *args, **options):
        with command_errors():
            manifest = synth_generate(
                options['out'],
                seed=options['seed'],
                n_videos=options['videos'],
                steps_per_video=options['steps'],
                frames_per_step=options['frames_per_step'],
                video_dim=options['video_dim'],
                text_dim=options['text_dim'],
                important_steps=options['important_steps'],
                noise=options['noise'],
                importance_signal=options['importance_signal'],
                replay_spread=options['replay_spread'],
                n_step_types=options['step_types'],
                val_fraction=options['val_fraction'],
                test_fraction=options['test_fraction'],
            )
        splits = ', '.join(f"{name}={len(ids)}" for name, ids in manifest.splits().items())
        self.stdout.write(self.style.SUCCESS(f"{len(manifest)} vidéos écrites dans {manifest.root} ({splits})"))
