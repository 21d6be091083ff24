import itertools

import numpy as np
from adaptation.training import AdaptConfig
from classifier.ann import AnnConfig, ann_predict, ann_train
from classifier.training import TrainConfig
from core.exceptions import DimensionError, ValidationError
from core.rng import derive_seed, make_rng
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from phenology.profiles import CORN, DEFAULT_SCENARIOS, SOYBEAN
from phenology.synth import divergence_window, generate_dataset
from pipeline.datasets import slice_steps
from pipeline.sequences import composites_to_steps

from .metrics import auc, classification_auc, f1, macro_auc
from .reports import (
    REPORT_COLUMNS, EvalReport, EvalRow, compare_methods, format_report, restricted_period_probe, score,
)
from .serializers import evaluate_config_from_data

SCENARIOS = {scenario.name: scenario for scenario in DEFAULT_SCENARIOS}
TINY_CONFIGS = {
    'ann': AnnConfig(hidden_dim=4, epochs=3, batch_size=8),
    'lstm': TrainConfig(hidden_dim=4, epochs=2, batch_size=8, learning_rate=0.02),
    'adapt': AdaptConfig(epochs=1, batch_size=8, residual_dim=2),
}
SUITE_SEEDS = (31, 41, 51)


def pair_count_auc(scores, positives):
    wins = 0.0
    pairs = 0
    for pos, neg in itertools.product(np.flatnonzero(positives), np.flatnonzero(~positives)):
        pairs += 1
        if scores[pos] > scores[neg]:
            wins += 1.0
        elif scores[pos] == scores[neg]:
            wins += 0.5
    return wins / pairs


def small(name='in_domain', seed=1, mix=None):
    return slice_steps(generate_dataset(mix or {'corn': 8, 'soybean': 8}, SCENARIOS[name], seed), (16, 21))


class AucTests(SimpleTestCase):
    def test_perfect_separation(self):
        self.assertEqual(auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]), 1.0)
        self.assertEqual(auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]), 0.0)

    def test_all_ties_half(self):
        self.assertEqual(auc([0.5] * 6, [1, 0, 1, 0, 1, 0]), 0.5)

    def test_small_hand_case(self):
        scores = [0.1, 0.4, 0.35, 0.8]
        positives = np.array([0, 0, 1, 1], dtype=bool)
        self.assertAlmostEqual(auc(scores, positives), 0.75)
        self.assertAlmostEqual(auc(scores, positives), pair_count_auc(np.array(scores), positives))

    def test_matches_pair_counting(self):
        rng = make_rng(20160716)
        checked = 0
        while checked < 200:
            size = int(rng.integers(2, 51))
            # coarse grid so ties show up
            scores = np.round(rng.random(size), 1)
            positives = rng.random(size) < 0.5
            if positives.all() or not positives.any():
                continue
            self.assertAlmostEqual(auc(scores, positives), pair_count_auc(scores, positives), places=12)
            checked += 1

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=2, max_size=30)
        .filter(lambda rows: 0 < sum(flag for _, flag in rows) < len(rows))
    )
    def test_strictly_increasing_transform(self, rows):
        scores = np.array([value for value, _ in rows])
        positives = np.array([flag for _, flag in rows])
        self.assertAlmostEqual(auc(scores, positives), auc(np.exp(scores / 10.0) * 3 + 1, positives), places=12)

    def test_single_class_rejected(self):
        with self.assertRaises(ValidationError):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            auc([0.1, 0.2, 0.3], [1, 0])

    def test_macro_auc(self):
        probabilities = np.eye(3)[[0, 1, 2, 0, 1, 2]] * 0.7 + 0.1
        labels = np.array([0, 1, 2, 0, 1, 2])
        self.assertEqual(macro_auc(probabilities, labels), 1.0)
        self.assertEqual(classification_auc(probabilities, labels), 1.0)

    def test_binary_uses_positive_column(self):
        probabilities = np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8]])
        labels = np.array([0, 1, 0, 1])
        self.assertAlmostEqual(classification_auc(probabilities, labels, 0), 0.75)
        self.assertAlmostEqual(classification_auc(probabilities, labels, 1), 0.25)


class F1Tests(SimpleTestCase):
    def test_hand_counts(self):
        # tp=2, fp=1, fn=1
        self.assertAlmostEqual(f1([0, 0, 0, 1, 1], [0, 0, 1, 0, 1]), 2 / 3)

    def test_no_predicted_positives(self):
        self.assertEqual(f1([1, 1, 1], [0, 1, 0]), 0.0)

    def test_positive_class_switch(self):
        self.assertEqual(f1([1, 1, 0], [1, 1, 0], positive_class=1), 1.0)

    def test_random_recount(self):
        rng = make_rng(3)
        for _ in range(50):
            predictions = rng.integers(0, 2, size=20)
            labels = rng.integers(0, 2, size=20)
            tp = sum(p == 0 and y == 0 for p, y in zip(predictions, labels))
            fp = sum(p == 0 and y == 1 for p, y in zip(predictions, labels))
            fn = sum(p == 1 and y == 0 for p, y in zip(predictions, labels))
            expected = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
            self.assertAlmostEqual(f1(predictions, labels), expected, places=12)

    def test_empty_and_mismatch(self):
        with self.assertRaises(ValidationError):
            f1([], [])
        with self.assertRaises(DimensionError):
            f1([0, 1], [0])

    def test_score_uses_argmax(self):
        train_set = small()
        probabilities = np.eye(2)[train_set.labels] * 0.6 + 0.2
        self.assertEqual(score(probabilities, train_set), (1.0, 1.0))


class CompareMethodsTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train_set = small(seed=1)
        cls.test_set = small(seed=2)

    def test_single_cell(self):
        report = compare_methods(self.train_set, {'in_domain': self.test_set}, ['ann'], seed=5, configs=TINY_CONFIGS)
        self.assertEqual(len(report.rows), 1)
        row = report.rows[0]
        self.assertEqual((row.method, row.scenario), ('ann', 'in_domain'))
        self.assertTrue(0.0 <= row.auc <= 1.0)
        self.assertTrue(0.0 <= row.f1 <= 1.0)
        self.assertEqual(row.train_digest, self.train_set.digest)
        self.assertEqual(row.test_digest, self.test_set.digest)

    def test_deterministic_csv(self):
        test_sets = {'in_domain': self.test_set, 'shift_16': small('shift_16', seed=3)}
        methods = ['ann', 'knn_dtw', 'lstm', 'lstm_att', 'da']
        first = compare_methods(self.train_set, test_sets, methods, seed=7, configs=TINY_CONFIGS)
        second = compare_methods(self.train_set, test_sets, methods, seed=7, configs=TINY_CONFIGS)
        self.assertEqual(first.to_csv(), second.to_csv())
        self.assertEqual(first.to_csv().splitlines()[0], ','.join(REPORT_COLUMNS))
        self.assertEqual(len(first.rows), 10)
        self.assertEqual(first.methods, methods)

    def test_method_seeds_differ(self):
        report = compare_methods(
            self.train_set, {'in_domain': self.test_set}, ['ann', 'lstm'], seed=7, configs=TINY_CONFIGS,
        )
        self.assertNotEqual(report.rows[0].seed, report.rows[1].seed)

    def test_unknown_method(self):
        with self.assertRaises(ValidationError):
            compare_methods(self.train_set, {'in_domain': self.test_set}, ['svm'], configs=TINY_CONFIGS)

    def test_layout_mismatch(self):
        other = slice_steps(self.test_set, (0, 3))
        with self.assertRaises(ValidationError):
            compare_methods(self.train_set, {'cut': other}, ['ann'], configs=TINY_CONFIGS)

    def test_positive_class_out_of_range(self):
        with self.assertRaises(ValidationError):
            compare_methods(self.train_set, {'in_domain': self.test_set}, ['ann'], positive_class=2)

    def test_unknown_config_section(self):
        with self.assertRaises(ValidationError):
            compare_methods(self.train_set, {'in_domain': self.test_set}, ['ann'], configs={'svm': {}})


class FormatReportTests(SimpleTestCase):
    def report(self, class_names=('corn', 'soybean')):
        rows = [
            EvalRow(method, scenario, value, value / 2, 'a' * 16, 'b' * 16, 1)
            for method, value in (('ann', 0.8), ('lstm_att', 0.9))
            for scenario in ('in_domain', 'shift_16')
        ]
        return EvalReport(rows, seed=1, class_names=class_names)

    def test_layout(self):
        lines = format_report(self.report()).splitlines()
        self.assertIn('in_domain', lines[0])
        self.assertIn('shift_16', lines[0])
        self.assertIn('AUC', lines[1])
        self.assertIn('F1', lines[1])
        self.assertTrue(lines[-2].lstrip().startswith('ann'))
        self.assertTrue(lines[-1].lstrip().startswith('lstm_att'))
        self.assertIn('0.900', lines[-1])
        self.assertIn('0.450', lines[-1])

    def test_macro_note(self):
        self.assertNotIn('macro', format_report(self.report()))
        self.assertIn('macro', format_report(self.report(('a', 'b', 'c'))))

    def test_empty(self):
        self.assertEqual(format_report(EvalReport()), '(empty report)')

    def test_cell_lookup(self):
        report = self.report()
        self.assertEqual(report.cell('ann', 'shift_16').auc, 0.8)
        with self.assertRaises(KeyError):
            report.cell('da', 'shift_16')


class RestrictedPeriodTests(SimpleTestCase):
    def test_full_interval_matches_plain_ann(self):
        train_set, test_set = small(seed=1), small(seed=2)
        config = TINY_CONFIGS['ann']
        result = restricted_period_probe(train_set, test_set, (0, train_set.shape[0] - 1), config, seed=4)
        expected = score(ann_predict(ann_train(train_set, config, 4), test_set), test_set)
        self.assertEqual((result.auc, result.f1), expected)
        self.assertEqual((result.full_auc, result.full_f1), expected)
        self.assertTrue(result.beats_full_sequence)

    def test_positive_class_reaches_scoring(self):
        train_set, test_set = small(seed=1), small(seed=2)
        config = TINY_CONFIGS['ann']
        interval = (0, train_set.shape[0] - 1)
        result = restricted_period_probe(train_set, test_set, interval, config, seed=4, positive_class=1)
        expected = score(ann_predict(ann_train(train_set, config, 4), test_set), test_set, positive_class=1)
        self.assertEqual((result.full_auc, result.full_f1), expected)
        self.assertEqual((result.auc, result.f1), expected)
        with self.assertRaises(ValidationError):
            restricted_period_probe(train_set, test_set, interval, config, positive_class=2)

    def test_bad_interval(self):
        train_set = small()
        with self.assertRaises(ValidationError):
            restricted_period_probe(train_set, train_set, (3, 40), TINY_CONFIGS['ann'])


class SerializerTests(SimpleTestCase):
    def test_defaults(self):
        methods, positive_class, configs = evaluate_config_from_data({})
        self.assertEqual(methods, ['ann', 'knn_dtw', 'lstm', 'lstm_att', 'da'])
        self.assertEqual(positive_class, 0)
        self.assertEqual(configs['lstm'], TrainConfig())

    def test_nested_sections(self):
        methods, _, configs = evaluate_config_from_data({'methods': ['ann'], 'ann': {'hidden_dim': 8}})
        self.assertEqual(methods, ['ann'])
        self.assertEqual(configs['ann'].hidden_dim, 8)

    def test_rejects(self):
        for data in ({'methods': ['svm']}, {'methods': ['ann', 'ann']}, {'methods': []}, {'lstm': {'layers': 2}}):
            with self.assertRaises(ValidationError):
                evaluate_config_from_data(data)


@tag('slow')
class SuiteAcceptanceTests(SimpleTestCase):
    METHODS = ['ann', 'knn_dtw', 'lstm', 'lstm_att', 'da']

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        mix = {'corn': 500, 'soybean': 500}
        cls.runs = {}
        for seed in SUITE_SEEDS:
            train_set = generate_dataset(mix, SCENARIOS['in_domain'], seed)
            test_sets = {
                name: generate_dataset(mix, scenario, derive_seed(seed, 'test', name))
                for name, scenario in SCENARIOS.items()
            }
            cls.runs[seed] = (train_set, test_sets, compare_methods(train_set, test_sets, cls.METHODS, seed=seed))

    def test_baselines_learn_in_domain(self):
        for seed, (_, _, report) in self.runs.items():
            for method in ('ann', 'knn_dtw', 'lstm'):
                with self.subTest(seed=seed, method=method):
                    self.assertGreaterEqual(report.cell(method, 'in_domain').auc, 0.85)

    def test_in_domain_lstm_att(self):
        for seed, (_, _, report) in self.runs.items():
            row = report.cell('lstm_att', 'in_domain')
            with self.subTest(seed=seed):
                self.assertGreaterEqual(row.auc, 0.95)
                self.assertGreaterEqual(row.f1, 0.90)

    def test_in_domain_ordering(self):
        for seed, (_, _, report) in self.runs.items():
            cell = lambda method: report.cell(method, 'in_domain').auc  # noqa: E731
            with self.subTest(seed=seed):
                self.assertGreaterEqual(cell('ann'), 0.85)
                self.assertGreaterEqual(cell('lstm'), 0.85)
                self.assertGreaterEqual(cell('lstm_att'), cell('lstm'))
                self.assertGreaterEqual(cell('lstm'), cell('ann') - 0.02)

    def test_degrades_with_shift(self):
        for seed, (_, _, report) in self.runs.items():
            for method in ('ann', 'knn_dtw', 'lstm', 'lstm_att'):
                values = [report.cell(method, name).auc for name in ('in_domain', 'shift_8', 'shift_16')]
                with self.subTest(seed=seed, method=method):
                    self.assertLessEqual(values[1], values[0] + 0.01)
                    self.assertLessEqual(values[2], values[1] + 0.01)
            att = [report.cell('lstm_att', name).auc for name in ('in_domain', 'shift_16')]
            with self.subTest(seed=seed, method='lstm_att'):
                self.assertGreaterEqual(att[0] - att[1], 0.05)

    def test_da_not_worse_on_shifted(self):
        for seed, (_, _, report) in self.runs.items():
            for name in ('shift_8', 'shift_16'):
                with self.subTest(seed=seed, scenario=name):
                    self.assertGreaterEqual(report.cell('da', name).auc, report.cell('lstm_att', name).auc)

    def test_restricted_period_on_divergence_window(self):
        for seed, (train_set, test_sets, _) in self.runs.items():
            interval = composites_to_steps(*divergence_window(CORN, SOYBEAN), steps=train_set.shape[0])
            result = restricted_period_probe(train_set, test_sets['in_domain'], interval, seed=seed)
            with self.subTest(seed=seed):
                self.assertGreaterEqual(result.full_auc, 0.85)
                self.assertGreaterEqual(result.auc, result.full_auc - 0.01)

    def test_restricted_period_outside_window(self):
        for seed, (train_set, test_sets, _) in self.runs.items():
            result = restricted_period_probe(train_set, test_sets['in_domain'], (2, 2), seed=seed)
            with self.subTest(seed=seed):
                self.assertLessEqual(result.auc, 0.6)
