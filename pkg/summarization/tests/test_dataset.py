import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from summarization.exceptions import (
    DimensionMismatchError,
    DuplicateVideoIdError,
    FeatureFileError,
    ManifestFileNotFoundError,
    ManifestSchemaError,
    ReplayScoreRangeError,
    SampleInvariantError,
    UnknownVideoError,
)
from summarization.services.dataset import (
    SubtitleSegment,
    decode_feature_array,
    encode_feature_array,
    ground_truth_scores,
    ground_truth_summaries,
    load_manifest,
    load_sample,
    read_feature_array,
    replay_to_labels,
    resolve_frame_labels,
    write_feature_array,
)
from summarization.tests.factories import make_sample, write_dataset


class FeatureFileTestCase(SimpleTestCase):
    def test_header_is_magic_rows_cols(self):
        data = encode_feature_array(np.ones((3, 2), dtype=np.float32))
        self.assertEqual(data[:4], b'HSUM')
        self.assertEqual(int.from_bytes(data[4:6], 'little'), 3)
        self.assertEqual(int.from_bytes(data[6:8], 'little'), 2)
        self.assertEqual(len(data), 8 + 3 * 2 * 4)

    def test_one_dimensional_array_is_stored_as_single_row(self):
        decoded = decode_feature_array(encode_feature_array(np.arange(5, dtype=np.float32)))
        self.assertEqual(decoded.shape, (1, 5))

    def test_bad_magic_is_rejected(self):
        data = b'NOPE' + encode_feature_array(np.zeros((1, 1)))[4:]
        with self.assertRaises(FeatureFileError):
            decode_feature_array(data)

    def test_truncated_payload_is_rejected(self):
        data = encode_feature_array(np.zeros((2, 3)))
        with self.assertRaises(FeatureFileError):
            decode_feature_array(data[:-4])

    def test_write_then_read_file(self):
        values = np.random.default_rng(0).standard_normal((4, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'x.hsum'
            write_feature_array(path, values)
            np.testing.assert_array_equal(read_feature_array(path), values)


class ReplayLabelTestCase(SimpleTestCase):
    def test_threshold_is_inclusive(self):
        np.testing.assert_array_equal(replay_to_labels([0.15, 0.149, 0.9]), [1, 0, 1])

    def test_boundary_values_exactly(self):
        scores = [0.0, 0.1499999, 0.15, 0.1500001, 1.0]
        np.testing.assert_array_equal(replay_to_labels(scores), [0, 0, 1, 1, 1])

    def test_all_zero_and_all_one(self):
        np.testing.assert_array_equal(replay_to_labels(np.zeros(4)), np.zeros(4))
        np.testing.assert_array_equal(replay_to_labels(np.ones(4)), np.ones(4))

    def test_out_of_range_score_raises(self):
        with self.assertRaises(ReplayScoreRangeError):
            replay_to_labels([0.2, 1.2])
        with self.assertRaises(ReplayScoreRangeError):
            replay_to_labels([-0.01])
        with self.assertRaises(ReplayScoreRangeError):
            replay_to_labels([np.nan])

    def test_monotone_and_elementwise(self):
        rng = np.random.default_rng(3)
        scores = rng.uniform(size=50)
        labels = replay_to_labels(scores)
        raised = np.minimum(scores + rng.uniform(0, 0.2, size=50), 1.0)
        self.assertTrue(np.all(replay_to_labels(raised) >= labels))
        permutation = rng.permutation(50)
        np.testing.assert_array_equal(replay_to_labels(scores[permutation]), labels[permutation])

    def test_custom_threshold(self):
        np.testing.assert_array_equal(replay_to_labels([0.3, 0.5], threshold=0.5), [0, 1])


class SampleInvariantTestCase(SimpleTestCase):
    def test_valid_sample_passes(self):
        make_sample().validate(require_labels=True)

    def test_subtitle_past_end_is_rejected(self):
        sample = make_sample(n_frames=10, n_sentences=2)
        sample.subtitles[-1].end_frame = 11
        with self.assertRaises(SampleInvariantError):
            sample.validate()

    def test_empty_subtitle_is_rejected(self):
        sample = make_sample(n_frames=10, n_sentences=2)
        sample.subtitles[0].end_frame = sample.subtitles[0].start_frame
        with self.assertRaises(SampleInvariantError):
            sample.validate()

    def test_training_sample_needs_labels_or_replay(self):
        sample = make_sample(with_replay=False)
        sample.frame_labels = None
        sample.validate()
        with self.assertRaises(SampleInvariantError):
            sample.validate(require_labels=True)

    def test_non_binary_labels_are_rejected(self):
        sample = make_sample(n_frames=4, n_sentences=1)
        sample.frame_labels = np.array([0, 1, 2, 0])
        with self.assertRaises(SampleInvariantError):
            sample.validate()

    def test_explicit_labels_take_precedence_over_replay(self):
        sample = make_sample(n_frames=4, n_sentences=1)
        sample.frame_labels = np.array([0, 0, 0, 1])
        sample.replay_scores = np.array([1.0, 1.0, 0.0, 0.0])
        np.testing.assert_array_equal(resolve_frame_labels(sample), [0, 0, 0, 1])
        sample.frame_labels = None
        np.testing.assert_array_equal(resolve_frame_labels(sample), [1, 1, 0, 0])

    def test_annotators_drive_ground_truth_when_present(self):
        sample = make_sample(n_frames=4, n_sentences=1)
        sample.annotator_scores = [np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 0.0, 0.0, 1.0])]
        sample.user_summaries = [np.array([1, 0, 0, 0]), np.array([0, 0, 0, 1])]
        np.testing.assert_allclose(ground_truth_scores(sample), [0.5, 0.0, 0.0, 0.5])
        self.assertEqual(len(ground_truth_summaries(sample)), 2)


class ManifestTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def _write(self, samples, splits=None):
        return write_dataset(self.root, samples, splits)

    def test_three_entries_with_splits(self):
        samples = [make_sample(f"v{i}", seed=i) for i in range(3)]
        manifest = load_manifest(self._write(samples, ['train', 'train', 'test']))
        self.assertEqual(len(manifest), 3)
        self.assertEqual(manifest.ids('train'), ['v0', 'v1'])
        self.assertEqual(manifest.ids('test'), ['v2'])
        self.assertEqual(manifest.ids('val'), [])

    def test_missing_manifest_file(self):
        with self.assertRaises(ManifestFileNotFoundError):
            load_manifest(self.root / 'absent.json')

    def test_missing_feature_file_names_path(self):
        path = self._write([make_sample('v0')])
        (self.root / 'videos' / 'v0.frames.hsum').unlink()
        with self.assertRaises(ManifestFileNotFoundError) as ctx:
            load_manifest(path)
        self.assertIn('v0.frames.hsum', str(ctx.exception))
        self.assertEqual(ctx.exception.video_id, 'v0')

    def test_duplicate_video_id(self):
        path = self._write([make_sample('v0')])
        document = json.loads(path.read_text())
        document['entries'].append(dict(document['entries'][0]))
        path.write_text(json.dumps(document))
        with self.assertRaises(DuplicateVideoIdError) as ctx:
            load_manifest(path)
        self.assertIn('v0', str(ctx.exception))

    def test_schema_violation_names_entry(self):
        path = self._write([make_sample('v0'), make_sample('v1', seed=1)])
        document = json.loads(path.read_text())
        document['entries'][1]['split'] = 'holdout'
        path.write_text(json.dumps(document))
        with self.assertRaises(ManifestSchemaError) as ctx:
            load_manifest(path)
        self.assertIn('v1', str(ctx.exception))

    def test_unknown_key_is_schema_error(self):
        path = self._write([make_sample('v0')])
        document = json.loads(path.read_text())
        document['entries'][0]['colour'] = 'red'
        path.write_text(json.dumps(document))
        with self.assertRaises(ManifestSchemaError):
            load_manifest(path)

    def test_load_sample_round_trip(self):
        original = make_sample('v0', n_frames=20, n_sentences=4, texts=True)
        manifest = load_manifest(self._write([original]))
        loaded = load_sample(manifest, 'v0')
        self.assertEqual(loaded.n_frames, 20)
        self.assertEqual(loaded.n_sentences, 4)
        np.testing.assert_array_equal(loaded.frame_features, original.frame_features)
        np.testing.assert_array_equal(loaded.subtitle_features(), original.subtitle_features())
        np.testing.assert_array_equal(loaded.global_feature, original.global_feature)
        np.testing.assert_array_equal(loaded.frame_labels, original.frame_labels)
        np.testing.assert_allclose(loaded.replay_scores, original.replay_scores)
        self.assertEqual(loaded.subtitle_spans(), original.subtitle_spans())
        self.assertEqual(loaded.subtitles[1].text, 'step 1 cut the board')

    def test_unknown_video_id(self):
        manifest = load_manifest(self._write([make_sample('v0')]))
        with self.assertRaises(UnknownVideoError) as ctx:
            load_sample(manifest, 'nope')
        self.assertIn('nope', str(ctx.exception))

    def test_dimension_mismatch_against_manifest(self):
        path = self._write([make_sample('v0')])
        write_feature_array(self.root / 'videos' / 'v0.frames.hsum', np.zeros((20, 5), dtype=np.float32))
        with self.assertRaises(DimensionMismatchError):
            load_sample(load_manifest(path), 'v0')

    def test_subtitle_out_of_range_on_load(self):
        path = self._write([make_sample('v0', n_frames=20, n_sentences=2)])
        labels_path = self.root / 'videos' / 'v0.labels.json'
        labels = json.loads(labels_path.read_text())
        labels['subtitles'][1]['end_frame'] = 21
        labels_path.write_text(json.dumps(labels))
        with self.assertRaises(SampleInvariantError):
            load_sample(load_manifest(path), 'v0')

    def test_subtitle_segment_accepts_raw_text(self):
        segment = SubtitleSegment(np.zeros(3), 0, 2, text='mix the dough')
        self.assertEqual(segment.text, 'mix the dough')
