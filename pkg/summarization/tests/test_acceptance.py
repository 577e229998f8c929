"""
Scénarios longs (tag `slow`) : suite de gradients, isolation du masque,
oracles KTS, sur-apprentissage synthétique, ablation du pas global et
déterminisme de bout en bout.

    python manage.py test summarization --tag slow
"""
import itertools
import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from django.core.management import call_command
from django.test import SimpleTestCase, TestCase, tag

from summarization.services.dataset import SubtitleSegment, VideoSample, load_split
from summarization.services.losses import (
    ContrastiveSampleSets,
    LossParts,
    focal_loss,
    inter_contrastive,
    intra_contrastive,
    mse_replay_loss,
    total_loss,
)
from summarization.services.metrics import evaluate_model
from summarization.services.network import forward, init_params
from summarization.services.pydantic_models import ExperimentConfig, LossWeights
from summarization.services.segmentation import kts_fixed, kts_segment
from summarization.services.synthetic import synth_generate
from summarization.services.trainer import fit
from summarization.tests.factories import make_sample, tiny_config, write_dataset

BASE_DIR = Path(__file__).resolve().parent.parent.parent


def _scatter(features, starts):
    ends = list(starts[1:]) + [len(features)]
    return sum(
        float(((features[s:e] - features[s:e].mean(axis=0)) ** 2).sum())
        for s, e in zip(starts, ends)
    )


@tag('slow')
class GradientSuiteTestCase(SimpleTestCase):
    """D=16, N=6, M=3 en float64"""

    def setUp(self):
        generator = torch.Generator().manual_seed(0)
        self.frames = torch.randn(6, 16, generator=generator, dtype=torch.float64, requires_grad=True)
        self.texts = torch.randn(3, 16, generator=generator, dtype=torch.float64, requires_grad=True)
        self.probs = torch.rand(6, generator=generator, dtype=torch.float64).mul(0.8).add(0.1).requires_grad_()
        self.replay = torch.rand(6, generator=generator, dtype=torch.float64)
        self.labels = torch.tensor([1.0, 1.0, 0.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        self.sets = ContrastiveSampleSets(
            positive_frames=[0, 1], positive_sentences=[0],
            hard_negative_frames=[4, 5], hard_negative_sentences=[2],
        )

    def _check(self, function, inputs):
        self.assertTrue(torch.autograd.gradcheck(function, inputs, eps=1e-6, atol=1e-8, rtol=1e-4))

    def test_focal(self):
        self._check(lambda p: focal_loss(p, self.labels), (self.probs,))

    def test_mse(self):
        self._check(lambda p: mse_replay_loss(p, self.replay), (self.probs,))

    def test_inter(self):
        self._check(
            lambda v, t: inter_contrastive(F.normalize(v, dim=-1), F.normalize(t, dim=-1), 0.5),
            (self.frames[:3].detach().requires_grad_(), self.texts),
        )

    def test_intra(self):
        self._check(lambda f, t: intra_contrastive(f, t, self.sets, 0.5), (self.frames, self.texts))

    def test_total(self):
        weights = LossWeights(alpha_mse=1.0, beta=0.1, lambda_intra=1.0, temperature=0.5)

        def objective(p, f, t):
            parts = LossParts(
                cls_video=focal_loss(p, self.labels),
                cls_text=focal_loss(p[:3], self.labels[:3]),
                mse=mse_replay_loss(p, self.replay),
                inter=inter_contrastive(F.normalize(f[:3], dim=-1), F.normalize(t, dim=-1), 0.5),
                intra=intra_contrastive(f, t, self.sets, 0.5),
            )
            return total_loss(parts, weights)[0]

        self._check(objective, (self.probs, self.frames, self.texts))


@tag('slow')
class MaskIsolationTestCase(SimpleTestCase):
    def test_unaligned_subtitle_never_reaches_frame(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n_frames = int(rng.integers(4, 16))
            n_sentences = int(rng.integers(2, 5))
            cuts = np.sort(rng.choice(np.arange(1, n_frames), size=n_sentences - 1, replace=False))
            bounds = [0, *cuts.tolist(), n_frames]
            sample = VideoSample(
                video_id=f"trial-{trial}",
                frame_features=rng.standard_normal((n_frames, 8)).astype(np.float32),
                subtitles=[
                    SubtitleSegment(rng.standard_normal(6).astype(np.float32), bounds[j], bounds[j + 1])
                    for j in range(n_sentences)
                ],
            )
            model = init_params(tiny_config(n_layers=1, cross_modal_only=True), seed=trial)
            model.eval()
            with torch.no_grad():
                before = forward(model, sample).frame_tokens
                target = int(rng.integers(n_sentences))
                sample.subtitles[target].text_feature = sample.subtitles[target].text_feature + 10.0
                after = forward(model, sample).frame_tokens
            start, end = bounds[target], bounds[target + 1]
            outside = [i for i in range(n_frames) if not start <= i < end]
            delta = (after[outside] - before[outside]).abs().max()
            self.assertLess(float(delta), 1e-5)


@tag('slow')
class KtsOracleTestCase(SimpleTestCase):
    def test_dynamic_program_equals_brute_force(self):
        rng = np.random.default_rng(0)
        for n_frames in (5, 9, 14, 20):
            features = rng.standard_normal((n_frames, 4))
            for count in (1, 2, 3):
                _, objective = kts_fixed(features, count)
                brute = min(
                    _scatter(features, [0, *cut])
                    for cut in itertools.combinations(range(1, n_frames), count)
                )
                self.assertAlmostEqual(objective, brute, places=9)

    def test_planted_steps_recovered_on_most_seeds(self):
        recovered = 0
        with tempfile.TemporaryDirectory() as tmp:
            for seed in range(100):
                manifest = synth_generate(
                    Path(tmp) / str(seed), seed=seed, n_videos=1, steps_per_video=3,
                    frames_per_step=10, video_dim=16, text_dim=8,
                )
                sample = load_split(manifest, None)[0]
                found = kts_segment(sample.frame_features).change_points
                if len(found) == 3 and all(abs(a - b) <= 1 for a, b in zip(found, [0, 10, 20])):
                    recovered += 1
        self.assertGreaterEqual(recovered, 95)


@tag('slow')
class OverfitTestCase(SimpleTestCase):
    def test_synthetic_training_set_is_learned(self):
        document = json.loads((BASE_DIR / 'configs' / 'synthetic_overfit.json').read_text())
        with tempfile.TemporaryDirectory() as tmp:
            manifest = synth_generate(
                Path(tmp) / 'data', seed=7, n_videos=8, steps_per_video=4,
                frames_per_step=5, video_dim=16, text_dim=16,
            )
            document.update(manifest=str(Path(tmp) / 'data' / 'manifest.json'), checkpoint_dir=str(Path(tmp) / 'run'))
            config = ExperimentConfig(**document)
            result = fit(
                manifest,
                config.to_model_config(manifest.video_dim, manifest.text_dim),
                config.to_train_config(),
                config.to_eval_protocol(),
            )
            report = evaluate_model(result.model, load_split(manifest, 'train'), config.to_eval_protocol())
        self.assertGreaterEqual(report.get('f1'), 0.95)
        self.assertGreaterEqual(report.get('kendall_tau'), 0.8)


@tag('slow')
class GlobalStepAblationTestCase(SimpleTestCase):
    def test_global_descriptions_raise_validation_tau(self):
        taus = {0: [], 5: []}
        with tempfile.TemporaryDirectory() as tmp:
            manifest = synth_generate(
                Path(tmp) / 'data', seed=3, n_videos=64, steps_per_video=4, frames_per_step=5,
                video_dim=16, text_dim=16, val_fraction=0.25,
            )
            for seed in range(3):
                for global_step in (0, 5):
                    config = ExperimentConfig(
                        manifest=Path(tmp) / 'data' / 'manifest.json',
                        checkpoint_dir=Path(tmp) / f"s{seed}-g{global_step}",
                        seed=seed, hidden_dim=32, n_layers=1, n_heads=4, dropout=0.0,
                        epochs=15, warmup_epochs=0, global_step=global_step, summary_mode='topk',
                    )
                    result = fit(
                        manifest,
                        config.to_model_config(manifest.video_dim, manifest.text_dim),
                        config.to_train_config(),
                        config.to_eval_protocol(),
                    )
                    steps = result.parent_steps + result.child_steps
                    self.assertEqual(result.parent_steps, steps // global_step if global_step else 0)
                    self.assertEqual(result.last_report.split, 'val')
                    taus[global_step].append(result.last_report.get('kendall_tau'))
        self.assertGreater(np.mean(taus[5]), np.mean(taus[0]))


@tag('slow')
class TrainDeterminismTestCase(TestCase):
    def test_two_identical_train_invocations(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            samples = [make_sample(f"v{i}", n_frames=12, n_sentences=3, seed=i) for i in range(4)]
            manifest = write_dataset(root / 'data', samples)
            for name in ('a', 'b'):
                call_command(
                    'train', '--manifest', str(manifest), '--checkpoint-dir', str(root / name),
                    '--hidden-dim', '16', '--n-heads', '2', '--n-layers', '1', '--dropout', '0.1',
                    '--epochs', '3', '--global-step', '2', '--seed', '11',
                    stdout=StringIO(),
                )
            for checkpoint in ('best.ckpt', 'last.ckpt'):
                self.assertEqual((root / 'a' / checkpoint).read_bytes(), (root / 'b' / checkpoint).read_bytes())
            self.assertEqual((root / 'a' / 'history.jsonl').read_text(), (root / 'b' / 'history.jsonl').read_text())
