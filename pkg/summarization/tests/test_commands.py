import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command, load_command_class
from django.core.management.base import CommandError
from django.test import TestCase

from summarization.models import EvaluationRun, TrainingRun
from summarization.services.checkpoints import save_checkpoint
from summarization.tests.factories import make_sample, oracle_model, oracle_samples, write_dataset


def _call(name, *args):
    out = StringIO()
    call_command(name, *[str(a) for a in args], stdout=out)
    return out.getvalue()


class CommandTestCase(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()


class SynthCommandTestCase(CommandTestCase):
    def test_same_seed_writes_identical_trees(self):
        for name in ('a', 'b'):
            _call('synth', '--out', self.root / name, '--seed', 7, '--videos', 8)
        first = sorted(p.relative_to(self.root / 'a') for p in (self.root / 'a').rglob('*') if p.is_file())
        second = sorted(p.relative_to(self.root / 'b') for p in (self.root / 'b').rglob('*') if p.is_file())
        self.assertEqual(first, second)
        for relative in first:
            self.assertEqual((self.root / 'a' / relative).read_bytes(), (self.root / 'b' / relative).read_bytes())
        manifest = json.loads((self.root / 'a' / 'manifest.json').read_text())
        self.assertEqual(len(manifest['entries']), 8)

    def test_missing_out_is_usage_error(self):
        command = load_command_class('summarization', 'synth')
        with self.assertRaises(SystemExit) as ctx:
            command.run_from_argv(['manage.py', 'synth', '--seed', '7'])
        self.assertEqual(ctx.exception.code, 2)

    def test_zero_videos_is_validation_error(self):
        with self.assertRaises(CommandError) as ctx:
            _call('synth', '--out', self.root / 'x', '--videos', 0)
        self.assertEqual(ctx.exception.returncode, 2)


class TrainCommandTestCase(CommandTestCase):
    def setUp(self):
        super().setUp()
        samples = [make_sample(f"v{i}", n_frames=12, n_sentences=3, seed=i) for i in range(4)]
        self.manifest = write_dataset(self.root / 'data', samples)

    def _base_args(self, run_dir):
        return [
            '--manifest', self.manifest, '--checkpoint-dir', run_dir,
            '--hidden-dim', 16, '--n-heads', 2, '--n-layers', 1, '--dropout', 0,
            '--batch-size', 2, '--epochs', 1, '--warmup-epochs', 0, '--summary-mode', 'topk',
        ]

    def test_global_step_zero_logs_no_parent_step(self):
        output = _call('train', *self._base_args(self.root / 'run'), '--global-step', 0, '--name', 'child-only')
        run = TrainingRun.objects.get(name='child-only')
        self.assertEqual(run.status, TrainingRun.STATUS_SUCCESS)
        self.assertEqual(run.parent_steps, 0)
        self.assertEqual(run.child_steps, 2)
        roles = [json.loads(line).get('role') for line in Path(run.history_path).read_text().splitlines()]
        self.assertNotIn('parent', roles)
        self.assertIn(str(run.id), output)

    def test_config_file_with_overrides(self):
        config_path = self.root / 'config.json'
        config_path.write_text(json.dumps({'global_step': 1, 'epochs': 3, 'seed': 5}))
        _call('train', '--config', config_path, *self._base_args(self.root / 'run'), '--name', 'parents')
        run = TrainingRun.objects.get(name='parents')
        self.assertEqual(run.config['epochs'], 1)
        self.assertEqual(run.config['seed'], 5)
        self.assertEqual(run.parent_steps, 2)
        self.assertTrue(Path(run.best_checkpoint).exists())

    def test_negative_learning_rate_is_rejected(self):
        config_path = self.root / 'config.json'
        config_path.write_text(json.dumps({'manifest': str(self.manifest), 'learning_rate': -0.1}))
        with self.assertRaises(CommandError) as ctx:
            _call('train', '--config', config_path)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('learning_rate', str(ctx.exception))
        self.assertFalse(TrainingRun.objects.exists())

    def test_missing_manifest_is_rejected(self):
        with self.assertRaises(CommandError) as ctx:
            _call('train', '--manifest', self.root / 'absent.json')
        self.assertEqual(ctx.exception.returncode, 2)


class EvalCommandTestCase(CommandTestCase):
    def setUp(self):
        super().setUp()
        samples = oracle_samples(n_videos=3)
        self.manifest = write_dataset(self.root / 'data', samples, ['test'] * 3)
        self.checkpoint = save_checkpoint(self.root / 'oracle.ckpt', oracle_model())

    def test_oracle_checkpoint_scores_perfect_f1(self):
        report_path = self.root / 'report.json'
        output = _call(
            'eval', '--checkpoint', self.checkpoint, '--manifest', self.manifest,
            '--summary-mode', 'topk', '--output', report_path,
        )
        report = json.loads(report_path.read_text())
        self.assertEqual(report['aggregates']['f1'], 1.0)
        self.assertEqual(report['split'], 'test')
        self.assertIn('"f1": 1.0', output)
        evaluation = EvaluationRun.objects.get()
        self.assertEqual(evaluation.f1, 1.0)
        self.assertIsNone(evaluation.training_run)

    def test_evaluation_is_linked_to_the_producing_run(self):
        run = TrainingRun.objects.create(
            name='oracle', config={}, status=TrainingRun.STATUS_SUCCESS, best_checkpoint=str(self.checkpoint),
        )
        _call('eval', '--checkpoint', self.checkpoint, '--manifest', self.manifest)
        evaluation = EvaluationRun.objects.get()
        self.assertEqual(evaluation.training_run, run)
        self.assertEqual(list(run.evaluations.all()), [evaluation])

    def test_map_rho_flag_adds_columns(self):
        csv_path = self.root / 'report.csv'
        _call(
            'eval', '--checkpoint', self.checkpoint, '--manifest', self.manifest,
            '--map-rho', 0.15, 0.5, '--csv', csv_path,
        )
        header = csv_path.read_text().splitlines()[0].split(',')
        self.assertIn('map_15', header)
        self.assertIn('map_50', header)

    def test_missing_checkpoint_is_file_error(self):
        with self.assertRaises(CommandError) as ctx:
            _call('eval', '--checkpoint', self.root / 'absent.ckpt', '--manifest', self.manifest)
        self.assertEqual(ctx.exception.returncode, 1)

    def test_empty_split_is_rejected(self):
        with self.assertRaises(CommandError) as ctx:
            _call('eval', '--checkpoint', self.checkpoint, '--manifest', self.manifest, '--split', 'val')
        self.assertEqual(ctx.exception.returncode, 2)


class SummarizeCommandTestCase(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.manifest = write_dataset(self.root / 'data', [make_sample('clip', n_frames=20, n_sentences=4, texts=True)])
        self.checkpoint = save_checkpoint(self.root / 'model.ckpt', oracle_model())

    def test_topk_selects_floor_fraction(self):
        output = _call(
            'summarize', '--checkpoint', self.checkpoint, '--manifest', self.manifest,
            '--video-id', 'clip', '--mode', 'topk', '--fraction', 0.55,
        )
        document = json.loads(output)
        self.assertEqual(len(document['selected_frames']), 11)
        self.assertEqual(document['mode'], 'topk')

    def test_knapsack_respects_budget_and_writes_files(self):
        summary_path = self.root / 'summary.json'
        scores_path = self.root / 'scores.csv'
        _call(
            'summarize', '--checkpoint', self.checkpoint, '--manifest', self.manifest,
            '--video-id', 'clip', '--budget', 0.15, '--output', summary_path, '--scores-csv', scores_path,
        )
        document = json.loads(summary_path.read_text())
        self.assertLessEqual(len(document['selected_frames']), 3)
        self.assertIn('shots', document)
        self.assertEqual(len(scores_path.read_text().splitlines()), 21)

    def test_unknown_video_id_is_named(self):
        with self.assertRaises(CommandError) as ctx:
            _call('summarize', '--checkpoint', self.checkpoint, '--manifest', self.manifest, '--video-id', 'nope')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('nope', str(ctx.exception))
