import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from classifier.attention import attention_intervals
from classifier.training import (
    TrainConfig, attention_profiles, estimate_period_shift, fit, init_model, mean_attention, predict_proba, train,
)
from core.exceptions import DigestMismatchError, DimensionError, StateError, ValidationError
from core.rng import make_rng
from django.test import SimpleTestCase, tag
from evaluation.metrics import auc
from hypothesis import given, settings, strategies as st
from phenology.profiles import DEFAULT_SCENARIOS
from phenology.synth import generate_dataset
from pipeline.datasets import slice_steps
from pipeline.sequences import WindowedSequence, ndvi_from_bands
from scipy.special import expit
from tensors.tensor import Tensor, binary_cross_entropy

from .networks import (
    DiscriminatorParams, MapperParams, adversarial_losses, attention_consistency, contexts, domain_losses,
    domain_score, map_dataset, map_target,
)
from .serializers import adapt_config_from_data
from .training import (
    AdaptConfig, AdaptedBundle, DomainPair, adapted_attention_profiles, adapted_predict_proba, load_adapted,
    train_da,
)

SCENARIOS = {scenario.name: scenario for scenario in DEFAULT_SCENARIOS}
MIX = {'corn': 12, 'soybean': 12}
TINY = TrainConfig(hidden_dim=6, epochs=4, batch_size=8, learning_rate=0.02)
TINY_ADAPT = AdaptConfig(epochs=2, batch_size=8, residual_dim=3)


def domain(name='in_domain', seed=1, mix=None, interval=(16, 25)):
    return slice_steps(generate_dataset(mix or MIX, SCENARIOS[name], seed), interval)


def disc_with(weight, bias=0.0):
    return DiscriminatorParams(Tensor(np.asarray(weight, dtype=float)), Tensor(np.asarray(bias, dtype=float)))


class MapperTests(SimpleTestCase):
    def test_identity_at_init(self):
        mapper = MapperParams.init(6, 8, make_rng(1))
        x = make_rng(2).normal(size=(5, 6))
        np.testing.assert_allclose(map_target(x, mapper), x, atol=1e-12)

    def test_zero_input_gives_bias(self):
        mapper = MapperParams.init(3, 2, make_rng(1))
        mapper.bias.data[:] = [0.1, -0.2, 0.3]
        np.testing.assert_allclose(map_target(np.zeros((4, 3)), mapper), np.tile([0.1, -0.2, 0.3], (4, 1)))

    def test_windowed_sequence_keeps_layout(self):
        mapper = MapperParams.init(4, 2, make_rng(1))
        seq = WindowedSequence(make_rng(3).random((7, 4)), window_composites=2, stride_composites=2)
        mapped = map_target(seq, mapper)
        self.assertIsInstance(mapped, WindowedSequence)
        self.assertEqual((mapped.window_composites, mapped.stride_composites), (2, 2))
        np.testing.assert_allclose(mapped.steps, seq.steps, atol=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            map_target(np.zeros((3, 5)), MapperParams.init(4, 2, make_rng(1)))

    def test_map_dataset_keeps_ids_and_labels(self):
        dataset = domain()
        mapped = map_dataset(dataset, MapperParams.init(dataset.shape[1], 2, make_rng(1)))
        self.assertEqual(mapped.pixel_ids, dataset.pixel_ids)
        np.testing.assert_array_equal(mapped.labels, dataset.labels)


class DiscriminatorTests(SimpleTestCase):
    def test_zero_weights_half(self):
        scores = domain_score(make_rng(1).normal(size=(4, 3)), disc_with(np.zeros(3)))
        np.testing.assert_array_equal(scores.data, np.full(4, 0.5))

    def test_monotone_in_logit(self):
        disc = disc_with([1.0, -0.5])
        scores = domain_score([[t, -t] for t in np.linspace(-2, 2, 9)], disc).data
        self.assertTrue(np.all(np.diff(scores) > 0))

    def test_closed_form(self):
        score = domain_score([0.7, 0.1], disc_with([1.0, -2.0], 0.5)).data
        self.assertAlmostEqual(float(score), float(expit(1.0)), places=12)

    def test_separated_clouds(self):
        rng = make_rng(5)
        source = rng.normal(2.0, 0.3, size=(40, 4))
        target = rng.normal(-2.0, 0.3, size=(40, 4))
        disc = DiscriminatorParams.init(4, rng)
        features = np.concatenate([source, target])
        labels = np.concatenate([np.ones(40), np.zeros(40)])
        fit(
            disc.tensors(), lambda x, y: binary_cross_entropy(domain_score(x, disc), y), features, labels,
            epochs=30, batch_size=16, learning_rate=0.05, clip_norm=5.0, seed=5, label="disc",
        )
        accuracy = np.mean((domain_score(features, disc).data > 0.5) == labels.astype(bool))
        self.assertGreaterEqual(accuracy, 0.95)


class LossTests(SimpleTestCase):
    def test_uninformed_discriminator(self):
        rng = make_rng(2)
        disc_loss, fool_loss = domain_losses(rng.normal(size=(3, 2)), rng.normal(size=(5, 2)), disc_with([0.0, 0.0]))
        self.assertAlmostEqual(float(disc_loss.data), math.log(2), places=12)
        self.assertAlmostEqual(float(fool_loss.data), math.log(2), places=12)

    def test_hand_evaluated_one_dimensional(self):
        disc = disc_with([1.0])
        disc_loss, fool_loss = domain_losses([[1.0], [2.0]], [[0.0], [-1.0]], disc)
        expected_disc = -(
            math.log(expit(1.0)) + math.log(expit(2.0)) + math.log(1 - expit(0.0)) + math.log(1 - expit(-1.0))
        ) / 4
        expected_fool = -(math.log(expit(0.0)) + math.log(expit(-1.0))) / 2
        self.assertAlmostEqual(float(disc_loss.data), expected_disc, places=12)
        self.assertAlmostEqual(float(fool_loss.data), expected_fool, places=12)

    def test_identical_domains_cannot_beat_chance(self):
        contexts_ = make_rng(3).normal(size=(6, 3))
        for seed in range(10):
            rng = make_rng(seed, 'disc')
            disc = disc_with(rng.normal(size=3) * 3, rng.normal())
            disc_loss, _ = domain_losses(contexts_, contexts_, disc)
            self.assertGreaterEqual(float(disc_loss.data), math.log(2) - 1e-12)

    def test_empty_batch(self):
        with self.assertRaises(ValidationError):
            domain_losses(np.zeros((0, 2)), np.zeros((3, 2)), disc_with([0.0, 0.0]))
        model = init_model(3, ('a', 'b'), TINY, 0)
        with self.assertRaises(ValidationError):
            adversarial_losses(
                np.zeros((0, 4, 3)), np.zeros((2, 4, 3)), model, MapperParams.init(3, 2, make_rng(1)),
                DiscriminatorParams.init(TINY.hidden_dim, make_rng(1)),
            )

    def test_identity_mapper_has_no_consistency_penalty(self):
        rng = make_rng(4)
        model = init_model(3, ('a', 'b'), TINY, 0).frozen()
        mapper = MapperParams.init(3, 2, rng)
        disc = DiscriminatorParams.init(TINY.hidden_dim, rng)
        source, target = rng.normal(size=(4, 5, 3)), rng.normal(size=(3, 5, 3))
        disc_loss, adapt_loss = adversarial_losses(source, target, model, mapper, disc, lambda_att=10.0)
        expected_disc, expected_fool = domain_losses(contexts(model, source)[0], contexts(model, target)[0], disc)
        self.assertAlmostEqual(float(disc_loss.data), float(expected_disc.data), places=12)
        self.assertAlmostEqual(float(adapt_loss.data), float(expected_fool.data), places=12)


class ConsistencyTests(SimpleTestCase):
    def test_identical_is_zero(self):
        self.assertEqual(attention_consistency([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]), 0.0)

    def test_swapped_one_hot(self):
        self.assertAlmostEqual(attention_consistency([1.0, 0.0], [0.0, 1.0]), 1.0)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            attention_consistency([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_non_negative(self, weights, seed):
        a = np.asarray(weights) + 1e-3
        a /= a.sum()
        b = make_rng(seed).dirichlet(np.ones(a.size))
        self.assertEqual(attention_consistency(a, b), attention_consistency(b, a))
        self.assertGreaterEqual(attention_consistency(a, b), 0.0)


class TrainDaTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.source = domain('in_domain', seed=1)
        cls.target = domain('shift_16', seed=2)
        cls.model = train(cls.source, TINY, seed=1)

    def test_source_model_untouched(self):
        before = [p.data.copy() for p in self.model.parameters()]
        adapted = train_da(DomainPair(self.source, self.target), self.model, TINY_ADAPT, seed=3)
        for snapshot, param in zip(before, self.model.parameters()):
            np.testing.assert_array_equal(param.data, snapshot)
        self.assertEqual(len(adapted.disc_history), TINY_ADAPT.epochs)
        self.assertEqual(len(adapted.adapt_history), TINY_ADAPT.epochs)
        self.assertEqual(adapted.source_digest, self.model.digest)
        self.assertEqual(adapted.target_digest, self.target.digest)

    def test_deterministic(self):
        pair = DomainPair(self.source, self.target)
        a = train_da(pair, self.model, TINY_ADAPT, seed=3)
        b = train_da(pair, self.model, TINY_ADAPT, seed=3)
        self.assertEqual(a.digest, b.digest)

    def test_layout_mismatch(self):
        with self.assertRaisesMessage(ValidationError, "layout mismatch"):
            DomainPair(self.source, slice_steps(self.target, (0, 3)))

    def test_untrained_model(self):
        model = init_model(self.source.shape[1], self.source.class_names, TINY, 0)
        with self.assertRaises(StateError):
            train_da(DomainPair(self.source, self.target), model, TINY_ADAPT)

    def test_identity_mapper_predicts_like_source(self):
        rng = make_rng(1)
        adapted = AdaptedBundle(
            self.model.frozen(), MapperParams.init(self.model.input_dim, 2, rng),
            DiscriminatorParams.init(self.model.hidden_dim, rng),
        )
        np.testing.assert_allclose(
            adapted_predict_proba(adapted, self.target), predict_proba(self.model, self.target), atol=1e-12,
        )
        profiles = adapted_attention_profiles(adapted, self.target)
        np.testing.assert_allclose(profiles.sum(axis=1), 1.0, atol=1e-12)

    def test_save_and_load(self):
        adapted = train_da(DomainPair(self.source, self.target), self.model, TINY_ADAPT, seed=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = adapted.save(Path(tmp) / 'adapted.json')
            loaded = load_adapted(path, self.model)
            self.assertEqual(loaded.to_dict(), adapted.to_dict())
            np.testing.assert_array_equal(
                adapted_predict_proba(loaded, self.target), adapted_predict_proba(adapted, self.target),
            )
            other = train(self.source, TINY, seed=99)
            with self.assertRaises(DigestMismatchError):
                load_adapted(path, other)

    def test_config_serializer(self):
        self.assertEqual(adapt_config_from_data({'lambda_att': 0.0}).lambda_att, 0.0)
        with self.assertRaises(ValidationError):
            adapt_config_from_data({'lambda_att': -1.0})
        with self.assertRaises(ValidationError):
            adapt_config_from_data({'generator_steps': 2})


def corn_auc(probabilities, dataset):
    return auc(probabilities[:, 0], dataset.labels == 0)


def step_ndvi(features, bands=7):
    """Mean NDVI proxy per windowed step, averaged over pixels."""
    features = np.asarray(features, dtype=np.float64)
    composites = features.reshape(features.shape[0], features.shape[1], -1, bands)
    return ndvi_from_bands(composites).mean(axis=(0, 2))


def peak_ratio(profile):
    return float(np.max(profile) * profile.size)


@tag('slow')
class AdaptationAcceptanceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        mix = {'corn': 500, 'soybean': 500}
        cls.source = generate_dataset(mix, SCENARIOS['in_domain'], 11)
        cls.source_test = generate_dataset(mix, SCENARIOS['in_domain'], 12)
        cls.model = train(cls.source, TrainConfig(), seed=11)
        cls.shift_16 = generate_dataset(mix, SCENARIOS['shift_16'], 13)
        cls.shift_16_held_out = generate_dataset(mix, SCENARIOS['shift_16'], 15)
        cls.adapted_16 = train_da(DomainPair(cls.source, cls.shift_16), cls.model, AdaptConfig(), seed=11)

    def test_null_shift_keeps_auc(self):
        held_out = generate_dataset({'corn': 500, 'soybean': 500}, SCENARIOS['in_domain'], 17)
        adapted = train_da(DomainPair(self.source, self.source_test), self.model, AdaptConfig(), seed=11)
        before = corn_auc(predict_proba(self.model, held_out), held_out)
        after = corn_auc(adapted_predict_proba(adapted, held_out), held_out)
        self.assertLessEqual(abs(after - before), 0.02)

    def test_shift_degrades_then_adaptation_recovers(self):
        target = self.shift_16_held_out
        source_auc = corn_auc(predict_proba(self.model, self.source_test), self.source_test)
        unadapted = corn_auc(predict_proba(self.model, target), target)
        self.assertGreaterEqual(source_auc - unadapted, 0.05)
        recovered = corn_auc(adapted_predict_proba(self.adapted_16, target), target)
        self.assertGreaterEqual(recovered - unadapted, 0.5 * (source_auc - unadapted))

    def test_consistency_weight_on_held_out_target(self):
        target = generate_dataset({'corn': 200, 'soybean': 200}, SCENARIOS['shift_8'], 14)
        held_out = generate_dataset({'corn': 200, 'soybean': 200}, SCENARIOS['shift_8'], 16)
        pair = DomainPair(self.source, target)
        regularized = train_da(pair, self.model, AdaptConfig(), seed=11)
        free = train_da(pair, self.model, replace(AdaptConfig(), lambda_att=0.0), seed=11)
        reference = attention_profiles(self.model, held_out)

        def consistency(adapted):
            return attention_consistency(reference, adapted_attention_profiles(adapted, held_out))

        self.assertLess(consistency(regularized), consistency(free))

    def test_adapted_attention_returns_to_source_period(self):
        target = self.shift_16_held_out
        source_profile = mean_attention(self.model, self.source_test)
        target_profile = mean_attention(self.model, target)
        adapted_profile = adapted_attention_profiles(self.adapted_16, target).mean(axis=0)
        self.assertLess(peak_ratio(target_profile), peak_ratio(source_profile))
        source_peak = attention_intervals(source_profile)[0]
        adapted_peak = attention_intervals(adapted_profile)[0]
        self.assertLessEqual(adapted_peak.first, source_peak.last)
        self.assertLessEqual(source_peak.first, adapted_peak.last)

    def test_mapping_moves_season_earlier(self):
        noiseless = replace(SCENARIOS['shift_16'], noise_sigma=0.0)
        pixels = generate_dataset({'corn': 100, 'soybean': 100}, noiseless, 18)
        mapped = map_dataset(pixels, self.adapted_16.mapper)
        before, after = step_ndvi(pixels.features), step_ndvi(mapped.features)
        self.assertLessEqual(int(np.argmax(after)), int(np.argmax(before)) - 1)
        reference = step_ndvi(self.source_test.features)
        self.assertLess(estimate_period_shift(reference, after), estimate_period_shift(reference, before))
