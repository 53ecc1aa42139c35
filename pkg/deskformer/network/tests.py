import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from deskformer.errors import ConfigurationError
from network import checkpoint
from network.transformer import (
    ModelConfig, QueryError, QuerySet, TrackingTransformer, spawn_track_queries)
from numerics import tensor as tn
from numerics.gradcheck import finite_difference_check
from numerics.tensor import Tensor

TINY = ModelConfig(
    d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=2, n_object_queries=4, patch_size=8,
    ffn_dim=32)


def random_frames(seed, size=16):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 256, size=(size, size), dtype=np.uint8),
            rng.integers(0, 256, size=(size, size), dtype=np.uint8))


def random_tracks(model, identities, seed=0):
    rng = np.random.default_rng(seed)
    queries = Tensor(rng.normal(size=(len(identities), model.config.d_model)))
    return QuerySet(track_queries=queries, track_identities=list(identities))


class ModelConfigTestCase(unittest.TestCase):

    def test_defaults_are_desk_scale(self):
        config = ModelConfig()
        self.assertEqual((config.d_model, config.n_heads), (64, 4))
        self.assertEqual((config.n_enc_layers, config.n_dec_layers), (2, 2))
        self.assertEqual(config.n_object_queries, 20)
        self.assertEqual(config.background_class, 1)

    def test_invalid(self):
        self.assertRaises(ConfigurationError, ModelConfig, d_model=18, n_heads=4)
        self.assertRaises(ConfigurationError, ModelConfig, n_object_queries=0)
        self.assertRaises(ConfigurationError, ModelConfig, d_model=6, n_heads=3)
        self.assertRaises(ConfigurationError, ModelConfig, activation='swish')


class EncodeTestCase(unittest.TestCase):

    def setUp(self):
        self.model = TrackingTransformer(TINY)

    def test_token_count(self):
        memory = self.model.encode(*random_frames(1))
        self.assertEqual(memory.shape, (8, 16))

    def test_indivisible_frames(self):
        frame = np.zeros((15, 16), dtype=np.uint8)
        self.assertRaises(ConfigurationError, self.model.encode, frame, frame)

    def test_mismatched_frames(self):
        self.assertRaises(
            ConfigurationError, self.model.encode,
            np.zeros((16, 16), dtype=np.uint8), np.zeros((16, 24), dtype=np.uint8))

    def test_identical_frames_without_temporal_encoding(self):
        self.model.temporal_embedding.data[:] = 0
        frame, _ = random_frames(2)
        memory = self.model.encode(frame, frame).data
        np.testing.assert_allclose(memory[:4], memory[4:], atol=1e-12)

    def test_temporal_encoding_changes_output(self):
        frame, _ = random_frames(3)
        with_temporal = self.model.encode(frame, frame).data
        self.model.temporal_embedding.data[:] = 0
        without = self.model.encode(frame, frame).data
        self.assertGreater(np.abs(with_temporal - without).max(), 1e-6)
        self.assertGreater(np.abs(with_temporal[:4] - with_temporal[4:]).max(), 1e-6)


class DecodeTestCase(unittest.TestCase):

    def setUp(self):
        self.model = TrackingTransformer(TINY)
        self.memory = self.model.encode(*random_frames(4))

    def test_object_queries_only(self):
        prediction = self.model.decode(self.memory, self.model.query_set())
        self.assertEqual(len(prediction), 4)
        self.assertEqual(prediction.embeddings.shape, (4, 16))
        self.assertEqual(prediction.class_probs.shape, (4, 2))
        np.testing.assert_allclose(prediction.class_probs.data.sum(axis=1), 1, atol=1e-9)
        self.assertTrue(((prediction.boxes.data >= 0) & (prediction.boxes.data <= 1)).all())
        self.assertEqual(len(prediction.bounding_boxes()), 4)
        self.assertEqual(prediction.scores().shape, (4,))

    def test_track_rows_come_first(self):
        queries = self.model.query_set(random_tracks(self.model, [7, 3]))
        prediction = self.model.decode(self.memory, queries)
        self.assertEqual(len(queries), 6)
        self.assertEqual(len(prediction), 6)

    def test_track_permutation_equivariance(self):
        tracks = random_tracks(self.model, [1, 2, 3], seed=5)
        permutation = [2, 0, 1]
        permuted = QuerySet(
            track_queries=Tensor(tracks.track_queries.data[permutation]),
            track_identities=[tracks.track_identities[i] for i in permutation])

        original = self.model.decode(self.memory, self.model.query_set(tracks))
        shuffled = self.model.decode(self.memory, self.model.query_set(permuted))
        np.testing.assert_allclose(
            shuffled.boxes.data[:3], original.boxes.data[permutation], atol=1e-9)
        np.testing.assert_allclose(
            shuffled.class_probs.data[:3], original.class_probs.data[permutation], atol=1e-9)
        np.testing.assert_allclose(shuffled.boxes.data[3:], original.boxes.data[3:], atol=1e-9)

    def test_zero_weights_give_uniform_classes(self):
        for tensor in self.model.parameters():
            tensor.data[...] = 0
        memory = Tensor(np.zeros((8, 16)))
        prediction = self.model.decode(memory, self.model.query_set())
        np.testing.assert_allclose(prediction.class_probs.data, 0.5)

    def test_auxiliary_predictions(self):
        model = TrackingTransformer(replace(TINY, aux_loss=True))
        prediction = model.predict(*random_frames(6), model.query_set())
        self.assertEqual(len(prediction.aux), 1)
        self.assertEqual(prediction.aux[0].boxes.shape, (4, 4))
        self.assertEqual(self.model.predict(
            *random_frames(6), self.model.query_set()).aux, [])

    def test_duplicate_track_identities(self):
        self.assertRaises(QueryError, random_tracks, self.model, [4, 4])

    def test_end_to_end_gradient(self):
        model = TrackingTransformer(replace(TINY, activation='gelu'))
        frames = random_frames(8)
        tracks = random_tracks(model, [1], seed=9)
        target = np.random.default_rng(10).uniform(0.2, 0.8, size=(5, 4))

        def loss(_):
            prediction = model.predict(*frames, model.query_set(tracks))
            error = prediction.boxes - target
            return (error * error).sum() - tn.log(prediction.class_probs[:, 0]).sum()

        for name, weight in model.named_parameters():
            indices = range(min(weight.data.size, 3))
            self.assertLess(finite_difference_check(loss, weight, indices=indices), 1e-4, name)


class SpawnTrackQueriesTestCase(unittest.TestCase):

    def setUp(self):
        self.model = TrackingTransformer(TINY)
        self.frames = random_frames(11)
        self.prediction = self.model.predict(*self.frames, self.model.query_set())

    def test_empty(self):
        fragment = spawn_track_queries(self.prediction, [], [])
        self.assertEqual(fragment.n_track, 0)
        self.assertEqual(fragment.track_queries.shape, (0, 16))
        self.assertIsNone(fragment.object_queries)

    def test_single(self):
        fragment = spawn_track_queries(self.prediction, [3], [7])
        self.assertEqual(fragment.track_identities, [7])
        np.testing.assert_array_equal(
            fragment.track_queries.data[0], self.prediction.embeddings.data[3])

    def test_consecutive_spawns_keep_order(self):
        first = spawn_track_queries(self.prediction, [2, 0], [5, 9])
        following = self.model.predict(*self.frames, self.model.query_set(first))
        second = spawn_track_queries(following, [0, 1], first.track_identities)
        self.assertEqual(second.track_identities, [5, 9])

    def test_out_of_range(self):
        self.assertRaises(QueryError, spawn_track_queries, self.prediction, [4], [1])
        self.assertRaises(QueryError, spawn_track_queries, self.prediction, [-1], [1])
        self.assertRaises(QueryError, spawn_track_queries, self.prediction, [0, 1], [1])


class CheckpointTestCase(unittest.TestCase):

    def setUp(self):
        self.model = TrackingTransformer(TINY)
        self.tmpdir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmpdir.name, 'model.ckpt')

    def tearDown(self):
        self.tmpdir.cleanup()

    def test_round_trip_is_bit_exact(self):
        momentum = {'box_head.layers.0.bias': np.arange(16, dtype=float)}
        checkpoint.save_checkpoint(self.path, self.model, step=42, momentum=momentum)
        loaded = checkpoint.load_checkpoint(self.path)
        self.assertEqual(loaded.config, TINY)
        self.assertEqual(loaded.step, 42)
        np.testing.assert_array_equal(loaded.momentum['box_head.layers.0.bias'], np.arange(16))

        rebuilt = loaded.build_model()
        for (name, original), (_, restored) in zip(
                self.model.named_parameters(), rebuilt.named_parameters()):
            self.assertEqual(original.data.tobytes(), restored.data.tobytes(), name)

        again = os.path.join(self.tmpdir.name, 'again.ckpt')
        checkpoint.save_checkpoint(again, rebuilt, step=42, momentum=loaded.momentum)
        with open(self.path, 'rb') as fh1, open(again, 'rb') as fh2:
            self.assertEqual(fh1.read(), fh2.read())

    def test_not_a_checkpoint(self):
        with open(self.path, 'wb') as fh:
            fh.write(b'hello\n')
        self.assertRaises(checkpoint.CheckpointError, checkpoint.load_checkpoint, self.path)

    def test_unknown_version(self):
        with open(self.path, 'wb') as fh:
            fh.write(b'DESKFORMER-CHECKPOINT 99\n{}\n')
        with self.assertRaisesRegex(checkpoint.CheckpointError, 'version 99'):
            checkpoint.load_checkpoint(self.path)

    def test_truncated(self):
        checkpoint.save_checkpoint(self.path, self.model)
        with open(self.path, 'rb') as fh:
            content = fh.read()
        with open(self.path, 'wb') as fh:
            fh.write(content[:-8])
        self.assertRaises(checkpoint.CheckpointError, checkpoint.load_checkpoint, self.path)

    def test_missing_file(self):
        self.assertRaises(
            checkpoint.CheckpointError, checkpoint.load_checkpoint, self.path + '.nope')

    def test_restore_into_other_shape(self):
        checkpoint.save_checkpoint(self.path, self.model)
        loaded = checkpoint.load_checkpoint(self.path)
        other = TrackingTransformer(replace(TINY, n_object_queries=5))
        self.assertRaises(checkpoint.CheckpointError, checkpoint.restore, other, loaded.parameters)
        self.assertRaises(checkpoint.CheckpointError, checkpoint.check_compatible, loaded,
                          other.config)
