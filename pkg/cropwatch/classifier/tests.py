import itertools
import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from core.exceptions import ArtifactVersionError, DimensionError, ValidationError
from core.rng import derive_seed, make_rng
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from phenology.profiles import CORN, DEFAULT_SCENARIOS, DEFAULT_TEMPLATES, SOYBEAN, SeasonScenario
from phenology.synth import divergence_window, generate_dataset
from pipeline.datasets import Dataset, DatasetPixel, slice_steps
from pipeline.sequences import WindowedSequence, composites_to_steps
from scipy.special import expit
from tensors.gradcheck import analytic_gradient, max_relative_error, numeric_gradient
from tensors.tensor import Tensor, cross_entropy

from .ann import AnnConfig, ann_predict, ann_train
from .attention import (
    AttentionParams, AttentionProfile, DenseHead, aggregate, attend, attention_intervals, attention_scores,
    classify,
)
from .bundle import FeatureScaler, ModelBundle
from .dtw import dtw_distance, dtw_to_references, knn_dtw_classify, knn_dtw_predict
from .lstm import GATES, LstmParams, encode, lstm_step
from .serializers import train_config_from_data
from .training import (
    TrainConfig, attention_profiles, classify_sequence, discriminative_period, estimate_period_shift,
    forward, init_model, mean_attention, predict, predict_proba, train,
)

TINY = TrainConfig(hidden_dim=6, epochs=4, batch_size=8, learning_rate=0.02)


def short_dataset(mix=None, seed=1, interval=(16, 25), scenario=DEFAULT_SCENARIOS[0]):
    dataset = generate_dataset(mix or {'corn': 12, 'soybean': 12}, scenario, seed)
    return slice_steps(dataset, interval)


def fixed_dataset(rows, labels=None, class_names=('a', 'b')):
    labels = labels or [0] * len(rows)
    pixels = [
        DatasetPixel(f"p{index:03d}", label, WindowedSequence(np.asarray(row, dtype=float)))
        for index, (row, label) in enumerate(zip(rows, labels))
    ]
    return Dataset(pixels, class_names)


class LstmStepTests(SimpleTestCase):
    def test_zero_network(self):
        params = LstmParams.zeros(3, 4)
        h, c = lstm_step([0.3, -1.0, 2.0], np.zeros(4), np.zeros(4), params)
        np.testing.assert_array_equal(h.data, np.zeros(4))
        np.testing.assert_array_equal(c.data, np.zeros(4))

    def test_memory_carry(self):
        params = LstmParams.zeros(2, 3)
        params.biases['forget'].data[:] = 50.0
        params.biases['input'].data[:] = -50.0
        c_prev = np.array([0.4, -0.2, 0.9])
        _, c = lstm_step([1.0, -1.0], np.array([0.1, 0.2, 0.3]), c_prev, params)
        np.testing.assert_allclose(c.data, c_prev, atol=1e-12)

    def test_matches_straight_line_oracle(self):
        rng = make_rng(11)
        params = LstmParams.init(3, 4, rng)
        x, h_prev, c_prev = rng.normal(size=3), rng.normal(size=4) * 0.5, rng.normal(size=4)
        z = np.concatenate([x, h_prev])
        pre = {g: params.weights[g].data @ z + params.biases[g].data for g in GATES}
        c_expected = expit(pre['forget']) * c_prev + expit(pre['input']) * np.tanh(pre['candidate'])
        h_expected = expit(pre['output']) * np.tanh(c_expected)
        h, c = lstm_step(x, h_prev, c_prev, params)
        np.testing.assert_allclose(h.data, h_expected, atol=1e-12)
        np.testing.assert_allclose(c.data, c_expected, atol=1e-12)

    def test_hidden_bounded(self):
        params = LstmParams.init(3, 5, make_rng(2))
        h, _ = lstm_step(np.full(3, 3.0), np.ones(5), np.full(5, 2.0), params)
        self.assertTrue(np.all(np.abs(h.data) < 1))

    def test_forget_bias_initialised_to_one(self):
        params = LstmParams.init(3, 5, make_rng(2))
        np.testing.assert_array_equal(params.biases['forget'].data, np.ones(5))

    def test_dimension_error_names_matrix(self):
        params = LstmParams.zeros(3, 4)
        params.weights['forget'] = Tensor(np.zeros((4, 6)))
        with self.assertRaisesMessage(DimensionError, "forget-gate weight"):
            lstm_step(np.zeros(3), np.zeros(4), np.zeros(4), params)

    def test_input_size_mismatch(self):
        with self.assertRaises(DimensionError):
            lstm_step(np.zeros(2), np.zeros(4), np.zeros(4), LstmParams.zeros(3, 4))


class EncodeTests(SimpleTestCase):
    def test_single_step(self):
        params = LstmParams.init(3, 4, make_rng(5))
        x = make_rng(6).normal(size=(1, 3))
        h, _ = lstm_step(x[0], np.zeros(4), np.zeros(4), params)
        np.testing.assert_array_equal(encode(x, params).data[0], h.data)

    def test_order_matters(self):
        params = LstmParams.init(3, 4, make_rng(5))
        x = make_rng(7).normal(size=(6, 3))
        forward_pass = encode(x, params).data[-1]
        reversed_pass = encode(x[::-1].copy(), params).data[-1]
        self.assertFalse(np.allclose(forward_pass, reversed_pass))

    def test_zero_sequence_zero_biases(self):
        params = LstmParams.init(3, 4, make_rng(5))
        for gate in GATES:
            params.biases[gate].data[:] = 0.0
        np.testing.assert_array_equal(encode(np.zeros((8, 3)), params).data, np.zeros((8, 4)))

    def test_batch_matches_single(self):
        params = LstmParams.init(3, 4, make_rng(5))
        batch = make_rng(8).normal(size=(5, 7, 3))
        full = encode(batch, params).data
        for row in range(5):
            np.testing.assert_allclose(full[row], encode(batch[row], params).data, atol=1e-14)


class AttentionTests(SimpleTestCase):
    def scorer(self, weight, bias=0.0):
        return AttentionParams(Tensor(np.asarray(weight, dtype=float)), Tensor(np.asarray(bias, dtype=float)))

    def test_identical_rows_uniform(self):
        profile = attend(np.tile([0.2, -0.4, 0.7], (5, 1)), self.scorer([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(profile.weights, np.full(5, 0.2), atol=1e-15)

    def test_single_step(self):
        profile = attend([[0.3, 0.1]], self.scorer([1.0, 1.0]))
        np.testing.assert_array_equal(profile.weights, [1.0])

    def test_closed_form(self):
        profile = attend([[0.0], [math.log(3)]], self.scorer([1.0]))
        np.testing.assert_allclose(profile.weights, [0.25, 0.75], atol=1e-12)

    def test_zero_hidden_scores_bias(self):
        scores = attention_scores(np.zeros((3, 2)), self.scorer([4.0, -1.0], 0.7))
        np.testing.assert_array_equal(scores.data, [0.7, 0.7, 0.7])

    def test_profile_validation(self):
        with self.assertRaises(ValidationError):
            AttentionProfile([0.5, 0.6])

    def test_aggregate_selects(self):
        hiddens = make_rng(1).normal(size=(4, 3))
        context = aggregate(hiddens, AttentionProfile([0.0, 0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(context.data, hiddens[2])

    def test_aggregate_fixed_point(self):
        context = aggregate(np.tile([0.1, 0.9], (4, 1)), AttentionProfile(np.full(4, 0.25)))
        np.testing.assert_allclose(context.data, [0.1, 0.9], atol=1e-15)

    def test_aggregate_hand_loop(self):
        rng = make_rng(4)
        hiddens = rng.normal(size=(3, 2))
        alpha = np.array([0.2, 0.5, 0.3])
        expected = np.zeros(2)
        for t in range(3):
            expected += alpha[t] * hiddens[t]
        np.testing.assert_allclose(aggregate(hiddens, AttentionProfile(alpha)).data, expected, atol=1e-15)

    def test_aggregate_length_mismatch(self):
        with self.assertRaises(DimensionError):
            aggregate(np.zeros((3, 2)), AttentionProfile([0.5, 0.5]))

    def test_aggregate_in_convex_hull(self):
        rng = make_rng(9)
        hiddens = np.tanh(rng.normal(size=(10, 4)))
        alpha = rng.random(10)
        context = aggregate(hiddens, AttentionProfile(alpha / alpha.sum())).data
        self.assertTrue(np.all(context <= hiddens.max(axis=0) + 1e-15))
        self.assertTrue(np.all(context >= hiddens.min(axis=0) - 1e-15))

    def test_classify(self):
        zero = DenseHead(Tensor(np.zeros((3, 4))), Tensor(np.zeros(4)))
        np.testing.assert_allclose(classify([1.0, -2.0, 0.5], zero).data, np.full(4, 0.25))
        head = DenseHead(Tensor([[1.0, -1.0], [0.5, 2.0]]), Tensor([0.1, -0.1]))
        shifted = DenseHead(head.weight, Tensor([10.1, 9.9]))
        context = np.array([0.3, -0.6])
        logits = context @ head.weight.data + head.bias.data
        expected = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(classify(context, head).data, expected, atol=1e-15)
        np.testing.assert_allclose(classify(context, shifted).data, expected, atol=1e-12)


class DiscriminativePeriodTests(SimpleTestCase):
    def test_uniform_has_no_interval(self):
        self.assertEqual(attention_intervals(np.full(43, 1 / 43)), [])

    def test_intervals_sorted_by_mass(self):
        weights = np.array([0.05, 0.3, 0.3, 0.05, 0.2, 0.05, 0.05])
        intervals = attention_intervals(weights / weights.sum())
        self.assertEqual([(i.first, i.last) for i in intervals], [(1, 2), (4, 4)])

    def test_stub_model_concentrated_on_known_steps(self):
        lstm = LstmParams.zeros(1, 1)
        lstm.biases['forget'].data[:] = -50.0
        lstm.biases['input'].data[:] = 50.0
        lstm.biases['output'].data[:] = 50.0
        lstm.weights['candidate'].data[0, 0] = 5.0
        attention = AttentionParams(Tensor([10.0]), Tensor(0.0))
        head = DenseHead(Tensor(np.zeros((1, 2))), Tensor(np.zeros(2)))
        model = ModelBundle(lstm, attention, head, ('a', 'b'), loss_history=[0.0])
        row = np.zeros((43, 1))
        row[10:16] = 1.0
        intervals = discriminative_period(model, fixed_dataset([row, row]))
        self.assertEqual([(i.first, i.last) for i in intervals], [(10, 15)])

    def test_period_shift(self):
        reference = np.exp(-0.5 * ((np.arange(43) - 18) / 2.0) ** 2)
        later = np.exp(-0.5 * ((np.arange(43) - 20) / 2.0) ** 2)
        self.assertEqual(estimate_period_shift(reference, later), 2)
        self.assertEqual(estimate_period_shift(later, reference), -2)
        self.assertEqual(estimate_period_shift(reference, reference), 0)


class GradientTests(SimpleTestCase):
    def test_end_to_end_matches_finite_differences(self):
        config = TrainConfig(hidden_dim=4)
        for seed in range(20):
            rng = make_rng(seed, 'gradcheck')
            x = rng.normal(size=(3, 5, 3))
            labels = rng.integers(0, 2, size=3)
            model = init_model(3, ('a', 'b'), config, seed)
            params = model.parameters()

            def loss_fn():
                probs, _ = forward(model, x)
                return cross_entropy(probs, labels)

            error = max_relative_error(analytic_gradient(loss_fn, params), numeric_gradient(loss_fn, params))
            self.assertLess(error, 1e-4, f"seed {seed}")


class TrainingTests(SimpleTestCase):
    def test_constant_label_fit(self):
        dataset = short_dataset({'corn': 6}, interval=(18, 23))
        dataset = Dataset(dataset.pixels, ('corn', 'soybean'))
        config = TrainConfig(hidden_dim=4, epochs=200, batch_size=2, learning_rate=0.05, require_two_classes=False)
        model = train(dataset, config, seed=1)
        self.assertTrue(np.all(predict_proba(model, dataset)[:, 0] >= 0.99))

    def test_loss_decreases(self):
        config = replace(TINY, epochs=10)
        model = train(short_dataset(), config, seed=3)
        self.assertEqual(len(model.loss_history), config.epochs)
        self.assertLess(model.loss_history[-1], model.config['initial_loss'])

    def test_deterministic(self):
        a = train(short_dataset(), TINY, seed=4)
        b = train(short_dataset(), TINY, seed=4)
        for x, y in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(x.data, y.data)

    def test_single_class_rejected(self):
        dataset = Dataset(short_dataset({'corn': 6}).pixels, ('corn', 'soybean'))
        with self.assertRaises(ValidationError):
            train(dataset, TINY)

    def test_records_lineage(self):
        dataset = short_dataset()
        model = train(dataset, TINY, seed=2)
        self.assertEqual(model.train_digest, dataset.digest)
        self.assertEqual(model.seed, 2)

    def test_last_pooling_profiles(self):
        dataset = short_dataset()
        model = train(dataset, replace(TINY, pooling='last'), seed=2)
        profiles = attention_profiles(model, dataset)
        np.testing.assert_array_equal(profiles[:, -1], np.ones(len(dataset)))

    def test_inference_helpers(self):
        dataset = short_dataset()
        model = train(dataset, TINY, seed=2)
        probs = predict_proba(model, dataset)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(len(dataset)), atol=1e-12)
        np.testing.assert_array_equal(predict(model, dataset), probs.argmax(axis=1))
        np.testing.assert_allclose(mean_attention(model, dataset).sum(), 1.0, atol=1e-12)
        np.testing.assert_allclose(classify_sequence(model, dataset.pixels[0].windowed), probs[0], atol=1e-12)

    def test_config_serializer(self):
        self.assertEqual(train_config_from_data({'hidden_dim': 8}).hidden_dim, 8)
        with self.assertRaises(ValidationError):
            train_config_from_data({'pooling': 'max'})
        with self.assertRaises(ValidationError):
            train_config_from_data({'layers': 2})

    @tag('slow')
    def test_default_set_held_out_accuracy(self):
        mix = {'corn': 500, 'soybean': 500}
        for seed in (20160101, 20160102, 20160103):
            train_set = generate_dataset(mix, DEFAULT_SCENARIOS[0], seed)
            test_set = generate_dataset(mix, DEFAULT_SCENARIOS[0], derive_seed(seed, 'test'))
            model = train(train_set, TrainConfig(), seed=seed)
            with self.subTest(seed=seed):
                self.assertLess(model.loss_history[-1], 0.5 * math.log(2))
                self.assertGreaterEqual(float(np.mean(predict(model, test_set) == test_set.labels)), 0.95)

    @tag('slow')
    def test_attention_finds_divergence_window(self):
        noiseless = SeasonScenario('noiseless', noise_sigma=0.0)
        late_soybean = replace(SOYBEAN, senescence_day=CORN.senescence_day)
        templates = {**DEFAULT_TEMPLATES, 'soybean': late_soybean}
        for seed in (7, 8, 9):
            dataset = generate_dataset({'corn': 200, 'soybean': 200}, noiseless, seed, templates=templates)
            model = train(dataset, TrainConfig(epochs=20), seed=seed)
            first, last = composites_to_steps(*divergence_window(CORN, late_soybean), steps=dataset.shape[0])
            profile = mean_attention(model, dataset)
            share = (last - first + 1) / dataset.shape[0]
            with self.subTest(seed=seed):
                self.assertGreaterEqual(profile[first:last + 1].sum(), 2 * share)


class BundleTests(SimpleTestCase):
    def test_round_trip(self):
        dataset = short_dataset()
        model = train(dataset, TINY, seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            path = model.save(Path(tmp) / 'model.json')
            loaded = ModelBundle.load(path)
        self.assertEqual(loaded.to_dict(), model.to_dict())
        self.assertEqual(loaded.digest, model.digest)
        np.testing.assert_array_equal(predict_proba(loaded, dataset), predict_proba(model, dataset))

    def test_version_mismatch(self):
        payload = init_model(3, ('a', 'b'), TINY, 0).to_dict()
        payload['version'] = 99
        with self.assertRaises(ArtifactVersionError):
            ModelBundle.from_dict(payload)

    def test_dimension_chain(self):
        model = init_model(3, ('a', 'b'), TINY, 0)
        with self.assertRaises(DimensionError):
            ModelBundle(model.lstm, model.attention, model.head, ('a', 'b', 'c'))

    def test_scaler_standardises_training_features(self):
        dataset = short_dataset()
        model = train(dataset, TINY, seed=9)
        scaled = model.scaler.apply(dataset.features).data.reshape(-1, dataset.shape[1])
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-9)

    def test_scaler_keeps_flat_features(self):
        features = np.stack([np.ones((4, 2)), np.full((4, 2), 3.0)])
        features[..., 1] = 0.5
        scaler = FeatureScaler.fit(features)
        np.testing.assert_allclose(scaler.mean, [2.0, 0.5])
        np.testing.assert_allclose(scaler.scale, [1.0, 1.0])
        with self.assertRaises(ValidationError):
            FeatureScaler.fit(np.zeros((0, 4, 2)))
        with self.assertRaises(DimensionError):
            scaler.apply(np.zeros((4, 3)))

    def test_payload_without_scaler_loads_as_identity(self):
        payload = init_model(3, ('a', 'b'), TINY, 0).to_dict()
        del payload['scaler']
        model = ModelBundle.from_dict(payload)
        np.testing.assert_array_equal(model.scaler.mean, np.zeros(3))
        np.testing.assert_array_equal(model.scaler.scale, np.ones(3))

    def test_scaler_dimension_checked(self):
        model = init_model(3, ('a', 'b'), TINY, 0)
        with self.assertRaises(DimensionError):
            ModelBundle(model.lstm, model.attention, model.head, ('a', 'b'), scaler=FeatureScaler.identity(4))

    def test_frozen_copy_has_no_gradients(self):
        model = init_model(3, ('a', 'b'), TINY, 0)
        self.assertFalse(any(t.requires_grad for t in model.frozen().parameters()))


def monotone_paths(n, m):
    """Every alignment path from (0, 0) to (n-1, m-1) with unit match/insert/delete moves."""
    if n == 1 and m == 1:
        return [[(0, 0)]]
    paths = []
    for di, dj in ((1, 0), (0, 1), (1, 1)):
        pi, pj = n - di, m - dj
        if pi >= 1 and pj >= 1:
            paths.extend(path + [(n - 1, m - 1)] for path in monotone_paths(pi, pj))
    return paths


class DtwTests(SimpleTestCase):
    def test_identity(self):
        a = make_rng(1).normal(size=(7, 3))
        self.assertEqual(dtw_distance(a, a), 0.0)

    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
        st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetric(self, a, b):
        self.assertAlmostEqual(dtw_distance(a, b), dtw_distance(b, a), places=9)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            dtw_distance(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_brute_force_paths(self):
        sequences = {
            length: np.array(list(itertools.product((0.0, 1.0, 2.0), repeat=length)))
            for length in range(1, 6)
        }
        for n, m in itertools.product(range(1, 6), repeat=2):
            paths = monotone_paths(n, m)
            incidence = np.zeros((len(paths), n * m))
            for row, path in enumerate(paths):
                for i, j in path:
                    incidence[row, i * m + j] += 1
            a, b = sequences[n], sequences[m]
            expected = np.zeros((len(a), len(b)))
            for index, query in enumerate(a):
                local = np.abs(query[:, None] - b[:, None, :]).reshape(len(b), n * m)
                expected[index] = (local @ incidence.T).min(axis=-1)
                got = dtw_to_references(query, b[:, :, None])
                np.testing.assert_allclose(got, expected[index], atol=1e-12)
            if n <= 3 and m <= 3:
                for ia, ib in itertools.product(range(len(a)), range(len(b))):
                    self.assertAlmostEqual(dtw_distance(a[ia], b[ib]), expected[ia, ib], places=12)

    def test_query_equal_to_training_pixel(self):
        rng = make_rng(3)
        rows = [rng.random((6, 2)) for _ in range(4)]
        dataset = fixed_dataset(rows, [0, 1, 1, 0])
        self.assertEqual(knn_dtw_classify(dataset, rows[1]), 1)

    def test_single_reference(self):
        dataset = fixed_dataset([np.zeros((4, 1))], [1])
        for value in (0.0, 5.0, -3.0):
            self.assertEqual(knn_dtw_classify(dataset, np.full((4, 1), value)), 1)

    def test_hand_set_matches_distance_table(self):
        rng = make_rng(12)
        rows = [rng.random((5, 2)) for _ in range(5)]
        dataset = fixed_dataset(rows, [0, 1, 0, 1, 1])
        query = rng.random((5, 2))
        table = [dtw_distance(query, row) for row in rows]
        self.assertEqual(knn_dtw_classify(dataset, query), dataset.labels[int(np.argmin(table))])

    def test_ties_broken_by_pixel_id(self):
        pixels = [
            DatasetPixel('zeta', 1, WindowedSequence(np.ones((3, 1)))),
            DatasetPixel('alpha', 0, WindowedSequence(np.ones((3, 1)))),
        ]
        self.assertEqual(knn_dtw_classify(Dataset(pixels, ('a', 'b')), np.ones((3, 1))), 0)

    def test_empty_training_set(self):
        with self.assertRaises(ValidationError):
            knn_dtw_classify(Dataset([], ('a', 'b')), np.zeros((3, 1)))

    def test_batched_predict(self):
        train_set = short_dataset(seed=1, interval=(18, 24))
        test_set = short_dataset(seed=2, interval=(18, 24))
        labels, scores = knn_dtw_predict(train_set, test_set)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)
        for row in range(3):
            self.assertEqual(labels[row], knn_dtw_classify(train_set, test_set.pixels[row].windowed))


class AnnTests(SimpleTestCase):
    def test_constant_label_fit(self):
        dataset = Dataset(short_dataset({'corn': 6}).pixels, ('corn', 'soybean'))
        config = AnnConfig(hidden_dim=4, epochs=100, batch_size=6, learning_rate=0.05, require_two_classes=False)
        model = ann_train(dataset, config, seed=1)
        self.assertTrue(np.all(ann_predict(model, dataset)[:, 0] >= 0.99))

    def test_deterministic(self):
        dataset = short_dataset()
        config = AnnConfig(hidden_dim=4, epochs=3)
        a = ann_predict(ann_train(dataset, config, seed=5), dataset)
        b = ann_predict(ann_train(dataset, config, seed=5), dataset)
        np.testing.assert_array_equal(a, b)

    def test_layout_mismatch(self):
        dataset = short_dataset()
        model = ann_train(dataset, AnnConfig(hidden_dim=4, epochs=1), seed=5)
        with self.assertRaises(DimensionError):
            ann_predict(model, slice_steps(dataset, (0, 3)))

    @tag('slow')
    def test_default_set_accuracy(self):
        mix = {'corn': 500, 'soybean': 500}
        for seed in (1, 2, 3):
            train_set = generate_dataset(mix, DEFAULT_SCENARIOS[0], seed)
            test_set = generate_dataset(mix, DEFAULT_SCENARIOS[0], derive_seed(seed, 'test'))
            model = ann_train(train_set, AnnConfig(), seed=seed)
            accuracy = float(np.mean(ann_predict(model, test_set).argmax(axis=1) == test_set.labels))
            with self.subTest(seed=seed):
                self.assertGreaterEqual(accuracy, 0.90)
