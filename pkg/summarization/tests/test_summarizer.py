import csv
import itertools
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from summarization.exceptions import ConfigurationError
from summarization.services.network import init_params
from summarization.services.segmentation import ShotBoundaries
from summarization.services.summarizer import (
    knapsack_select,
    predict_scores,
    select_sentences,
    summarize_scores,
    summarize_video,
    summary_to_dict,
    topk_select,
    write_scores_csv,
    write_summary_json,
)
from summarization.tests.factories import make_sample, tiny_config


def _brute_force(scores, lengths, budget):
    # Ordre lexicographique décroissant : à valeur égale, le premier optimum garde les plans précoces
    subsets = np.array(list(itertools.product([1, 0], repeat=len(scores))))
    feasible = subsets[subsets @ lengths <= budget]
    values = feasible @ scores
    first = int(np.flatnonzero(values >= values.max() - 1e-12)[0])
    return feasible[first], float(values.max())


class KnapsackTestCase(SimpleTestCase):
    def test_hand_example(self):
        selected = knapsack_select([5, 4, 3], [3, 2, 2], 4)
        np.testing.assert_array_equal(selected, [0, 1, 1])

    def test_unconstrained_budget_takes_everything(self):
        np.testing.assert_array_equal(knapsack_select([0.1, 0.5, 0.2], [2, 3, 1], 6), [1, 1, 1])

    def test_zero_budget_takes_nothing(self):
        np.testing.assert_array_equal(knapsack_select([0.1, 0.5], [2, 3], 0), [0, 0])

    def test_ties_prefer_earlier_shots(self):
        np.testing.assert_array_equal(knapsack_select([1.0, 1.0], [2, 2], 2), [1, 0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 16))
            scores = rng.uniform(size=n)
            lengths = rng.integers(1, 6, size=n)
            budget = int(rng.integers(0, lengths.sum() + 2))
            selected = knapsack_select(scores, lengths, budget)
            self.assertLessEqual(int((selected * lengths).sum()), budget)
            best_subset, best_value = _brute_force(scores, lengths, budget)
            self.assertAlmostEqual(float((selected * scores).sum()), best_value, places=9)
            np.testing.assert_array_equal(selected, best_subset)

    def test_tied_values_match_brute_force_tie_order(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 10))
            scores = rng.integers(0, 3, size=n).astype(float)
            lengths = rng.integers(1, 4, size=n)
            budget = int(rng.integers(0, lengths.sum() + 1))
            best_subset, _ = _brute_force(scores, lengths, budget)
            np.testing.assert_array_equal(knapsack_select(scores, lengths, budget), best_subset)

    def test_negative_budget(self):
        with self.assertRaises(ConfigurationError):
            knapsack_select([1.0], [1], -1)


class TopkTestCase(SimpleTestCase):
    def test_full_fraction(self):
        np.testing.assert_array_equal(topk_select([0.3, 0.1, 0.2], 1.0), [1, 1, 1])

    def test_hand_example(self):
        np.testing.assert_array_equal(topk_select([0.9, 0.1, 0.8, 0.2], 0.5), [1, 0, 1, 0])

    def test_ties_prefer_earlier_frames(self):
        np.testing.assert_array_equal(topk_select([0.5] * 4, 0.5), [1, 1, 0, 0])

    def test_count_is_floor_of_fraction(self):
        for n in (1, 7, 20, 33, 100):
            self.assertEqual(int(topk_select(np.linspace(0, 1, n), 0.55).sum()), math.floor(0.55 * n + 1e-9))

    def test_strictly_increasing_transform_keeps_selection(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            scores = rng.integers(0, 5, size=int(rng.integers(1, 25))).astype(float)
            fraction = float(rng.choice([0.15, 0.5, 0.9]))
            expected = topk_select(scores, fraction)
            np.testing.assert_array_equal(topk_select(np.exp(scores), fraction), expected)
            np.testing.assert_array_equal(topk_select(3 * scores - 2, fraction), expected)

    def test_fraction_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            topk_select([0.1, 0.2], 0.0)


class SentenceSelectionTestCase(SimpleTestCase):
    def test_threshold_is_inclusive(self):
        np.testing.assert_array_equal(select_sentences([0.5, 0.49, 0.9]), [1, 0, 1])

    def test_fixed_count(self):
        np.testing.assert_array_equal(select_sentences([0.1, 0.3, 0.2], count=2), [0, 1, 1])


class SummarizeScoresTestCase(SimpleTestCase):
    def test_knapsack_respects_budget(self):
        rng = np.random.default_rng(1)
        for n in (10, 37, 64):
            shots = ShotBoundaries(sorted({0, *rng.integers(1, n, size=5).tolist()}), n)
            selection = summarize_scores(rng.uniform(size=n), [0.7], budget_ratio=0.15, shots=shots)
            self.assertLessEqual(int(selection.selected_frames.sum()), math.ceil(0.15 * n))

    def test_single_shot_larger_than_budget_is_empty(self):
        selection = summarize_scores(np.ones(20), [0.9], budget_ratio=0.15)
        self.assertEqual(int(selection.selected_frames.sum()), 0)
        self.assertEqual(selection.sentence_indices(), [0])

    def test_topk_with_explicit_count(self):
        selection = summarize_scores([0.1, 0.9, 0.5, 0.7], [], mode='topk', topk=3)
        self.assertEqual(selection.frame_indices(), [1, 2, 3])

    def test_unknown_mode(self):
        with self.assertRaises(ConfigurationError):
            summarize_scores([0.1], [], mode='greedy')


class SummarizeVideoTestCase(SimpleTestCase):
    def setUp(self):
        self.model = init_params(tiny_config(), seed=0)
        self.sample = make_sample(n_frames=20, n_sentences=4, texts=True)

    def test_topk_selects_floor_fraction(self):
        selection = summarize_video(self.model, self.sample, mode='topk', fraction=0.55)
        self.assertEqual(int(selection.selected_frames.sum()), 11)

    def test_knapsack_uses_kts_shots(self):
        selection = summarize_video(self.model, self.sample, budget_ratio=0.5)
        self.assertIsNotNone(selection.shots)
        self.assertLessEqual(int(selection.selected_frames.sum()), 10)

    def test_outputs_json_and_csv(self):
        selection = summarize_video(self.model, self.sample, sentence_count=2)
        document = summary_to_dict(self.sample, selection)
        self.assertEqual(document['video_id'], 'video-0')
        self.assertEqual(len(document['selected_sentences']), 2)
        self.assertEqual(len(document['sentences']), 2)
        self.assertEqual(len(document['frame_scores']), 20)
        self.assertIn('shots', document)
        with tempfile.TemporaryDirectory() as tmp:
            json_path = write_summary_json(Path(tmp) / 'summary.json', self.sample, selection)
            self.assertEqual(json.loads(json_path.read_text())['mode'], 'knapsack')
            csv_path = write_scores_csv(Path(tmp) / 'scores.csv', selection)
            with csv_path.open() as handle:
                rows = list(csv.DictReader(handle))
            self.assertEqual(len(rows), 20)
            self.assertEqual(set(rows[0]), {'frame', 'score', 'selected', 'shot'})


class SubtitleFreeSummaryTestCase(SimpleTestCase):
    def test_video_without_subtitles_is_scored_on_frames_only(self):
        model = init_params(tiny_config(), seed=0)
        sample = make_sample('nosubs', n_frames=20, n_sentences=0)
        with self.assertLogs('summarization.services.summarizer', level='WARNING'):
            frame_scores, sentence_scores = predict_scores(model, sample)
        self.assertEqual(frame_scores.shape, (20,))
        self.assertEqual(sentence_scores.shape, (0,))
        with self.assertLogs('summarization.services.summarizer', level='WARNING'):
            selection = summarize_video(model, sample, mode='topk', fraction=0.5)
        self.assertEqual(int(selection.selected_frames.sum()), 10)
        self.assertEqual(selection.sentence_indices(), [])
