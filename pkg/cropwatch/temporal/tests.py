import numpy as np
from classifier.attention import AttentionParams, DenseHead
from classifier.bundle import ModelBundle
from classifier.lstm import LstmParams
from classifier.training import TrainConfig, classify_sequence, train
from core.exceptions import DimensionError, StateError, ValidationError
from core.rng import make_rng
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from phenology.profiles import (
    ALFALFA, CORN, CORN_COVER, COVER_CROP_MIX, DEFAULT_SCENARIOS, SOYBEAN, SOYBEAN_COVER, SUGARBEET_MIX,
    SeasonScenario,
)
from phenology.synth import generate_dataset, synth_pixel
from pipeline.datasets import Dataset, DatasetPixel, slice_steps
from pipeline.sequences import WindowedSequence, ndvi_series
from scipy.special import softmax
from tensors.tensor import Tensor

from .charts import render_confidence_svg
from .confidence import (
    CohortCurve, ConfidenceCurve, cohort_confidence, cohort_statistics, confidence_curves, confidence_frame,
    confidence_progression, detection_summary, earliest_detection, pixel_detections,
)
from .covercrops import (
    COVER_CROPPED, DETECTION_LABELS, EVERGREEN, PRIMARY_ONLY, CoverCropRule, cover_crop_table, cover_crop_table_frame,
    detect_cover_crop, detect_dataset, format_cover_crop_table,
)
from .serializers import cover_crop_rule_from_data, early_config_from_data

NOISELESS = SeasonScenario('noiseless', noise_sigma=0.0)
TINY = TrainConfig(hidden_dim=6, epochs=4, batch_size=8, learning_rate=0.02)
SUGARBEET_MIX_SMALL = {name: 150 for name in SUGARBEET_MIX}


def curve(values):
    values = np.asarray(values, dtype=float)
    return ConfidenceCurve(np.column_stack([values, 1 - values]), ('a', 'b'))


def constant_model(bias=(2.0, 0.0), input_dim=2):
    lstm = LstmParams.init(input_dim, 3, make_rng(1))
    attention = AttentionParams.init(3, make_rng(2))
    head = DenseHead(Tensor(np.zeros((3, 2))), Tensor(np.asarray(bias, dtype=float)))
    return ModelBundle(lstm, attention, head, ('a', 'b'), loss_history=[0.0])


def fixed_dataset(labels, steps=4, dim=2, seed=0):
    rng = make_rng(seed)
    pixels = [
        DatasetPixel(f"p{index}", label, WindowedSequence(rng.random((steps, dim))))
        for index, label in enumerate(labels)
    ]
    return Dataset(pixels, ('a', 'b'))


def noiseless_ndvi(profile, seed=0):
    return ndvi_series(synth_pixel(profile, NOISELESS, seed).sequence)


class ConfidenceProgressionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = slice_steps(generate_dataset({'corn': 12, 'soybean': 12}, DEFAULT_SCENARIOS[0], 1), (14, 25))
        cls.model = train(cls.dataset, TINY, seed=1)

    def test_last_row_equals_full_prediction(self):
        for pixel in self.dataset.pixels[:5]:
            progression = confidence_progression(self.model, pixel.windowed)
            np.testing.assert_array_equal(progression.per_step[-1], classify_sequence(self.model, pixel.windowed))

    def test_rows_are_distributions(self):
        progression = confidence_progression(self.model, self.dataset.pixels[0].windowed)
        self.assertEqual(len(progression), self.dataset.shape[0])
        np.testing.assert_allclose(progression.per_step.sum(axis=1), 1.0, atol=1e-12)

    def test_batched_matches_single(self):
        curves = confidence_curves(self.model, self.dataset)
        for row in (0, 7, 23):
            single = confidence_progression(self.model, self.dataset.pixels[row].windowed).per_step
            np.testing.assert_allclose(curves[row], single, atol=1e-12)

    def test_last_pooling_prefix(self):
        model = train(self.dataset, TrainConfig(hidden_dim=6, epochs=2, batch_size=8, pooling='last'), seed=2)
        pixel = self.dataset.pixels[3].windowed
        progression = confidence_progression(model, pixel)
        np.testing.assert_allclose(progression.per_step[4], classify_sequence(model, pixel.prefix(5)), atol=1e-12)

    def test_constant_model_identical_rows(self):
        per_step = confidence_progression(constant_model(), np.ones((6, 2))).per_step
        for row in per_step:
            np.testing.assert_allclose(row, softmax([2.0, 0.0]), atol=1e-15)

    def test_untrained_model(self):
        model = constant_model()
        model.loss_history = []
        with self.assertRaises(StateError):
            confidence_progression(model, np.ones((3, 2)))


class EarliestDetectionTests(SimpleTestCase):
    def test_constant_above_threshold(self):
        self.assertEqual(earliest_detection(curve([0.9] * 6), 'a', threshold=0.8, patience=2), 1)

    def test_never_reached(self):
        self.assertIsNone(earliest_detection(curve([0.5] * 6), 'a', threshold=0.8))

    def test_hand_built_curve(self):
        self.assertEqual(earliest_detection(curve([0.3, 0.85, 0.7, 0.9, 0.92]), 'a', 0.8, 2), 4)
        self.assertEqual(earliest_detection(curve([0.3, 0.85, 0.7, 0.9, 0.92]), 'a', 0.8, 1), 2)

    def test_run_cut_by_end(self):
        self.assertIsNone(earliest_detection(curve([0.1, 0.1, 0.95]), 'a', 0.8, 2))

    def test_class_by_index(self):
        self.assertEqual(earliest_detection(curve([0.1, 0.1, 0.1]), 1, 0.8, 3), 1)

    def test_unknown_class(self):
        with self.assertRaises(ValidationError):
            earliest_detection(curve([0.9]), 'c')
        with self.assertRaises(ValidationError):
            earliest_detection(curve([0.9]), 2)

    def test_bad_parameters(self):
        with self.assertRaises(ValidationError):
            earliest_detection(curve([0.9]), 'a', threshold=1.0)
        with self.assertRaises(ValidationError):
            earliest_detection(curve([0.9]), 'a', patience=0)

    def test_curve_validation(self):
        with self.assertRaises(ValidationError):
            ConfidenceCurve([[0.5, 0.6]], ('a', 'b'))
        with self.assertRaises(DimensionError):
            ConfidenceCurve([[1.0]], ('a', 'b'))


class CohortTests(SimpleTestCase):
    def test_single_curve_zero_std(self):
        stats = cohort_statistics([curve([0.2, 0.6, 0.9])], 'a')
        np.testing.assert_array_equal(stats.std, np.zeros(3))
        np.testing.assert_allclose(stats.mean, [0.2, 0.6, 0.9])

    def test_duplicates_zero_std(self):
        stats = cohort_statistics([curve([0.3, 0.7])] * 4, 'a')
        np.testing.assert_allclose(stats.std, np.zeros(2), atol=1e-15)

    def test_hand_computed(self):
        stats = cohort_statistics([curve([0.2, 0.5]), curve([0.4, 0.7]), curve([0.6, 0.9])], 'a')
        np.testing.assert_allclose(stats.mean, [0.4, 0.7], atol=1e-12)
        np.testing.assert_allclose(stats.std, [np.sqrt(0.08 / 3)] * 2, atol=1e-12)
        self.assertEqual(stats.size, 3)

    def test_empty_cohort(self):
        with self.assertRaises(ValidationError):
            cohort_statistics([], 'a')
        with self.assertRaises(ValidationError):
            cohort_confidence(constant_model(), fixed_dataset([0, 0]), 'b')

    def test_model_cohort(self):
        stats = cohort_confidence(constant_model(), fixed_dataset([0, 0, 1]), 'a')
        self.assertEqual((stats.class_name, stats.size), ('a', 2))
        np.testing.assert_allclose(stats.mean, np.full(4, softmax([2.0, 0.0])[0]), atol=1e-12)
        np.testing.assert_allclose(stats.std, np.zeros(4), atol=1e-12)

    def test_detections_and_summary(self):
        model, dataset = constant_model(), fixed_dataset([0, 0, 1])
        detections = pixel_detections(model, dataset)
        self.assertEqual(detections['earliest_step'].tolist()[:2], [1, 1])
        self.assertTrue(detections['earliest_step'].isna().tolist()[2])
        summary = detection_summary(model, dataset).set_index('class')
        self.assertEqual((summary.loc['a', 'pixels'], summary.loc['a', 'detected']), (2, 2))
        self.assertEqual(summary.loc['a', 'mean_step'], 1.0)
        self.assertEqual(summary.loc['b', 'detected'], 0)

    def test_confidence_frame_shape(self):
        cohorts = [
            CohortCurve('a', np.full(5, 0.7), np.zeros(5), 3),
            CohortCurve('b', np.full(5, 0.3), np.zeros(5), 3),
        ]
        frame = confidence_frame(cohorts)
        self.assertEqual(list(frame.columns), ['step', 'class', 'mean', 'std'])
        self.assertEqual(len(frame), 10)
        self.assertEqual(frame[frame['class'] == 'b']['step'].tolist(), [1, 2, 3, 4, 5])

    def test_early_config(self):
        self.assertEqual(early_config_from_data({}), {'threshold': 0.8, 'patience': 2})
        with self.assertRaises(ValidationError):
            early_config_from_data({'threshold': 1.5})


class ConfidenceSvgTests(SimpleTestCase):
    def test_lines_and_error_bars(self):
        cohorts = [
            CohortCurve('corn', np.linspace(0.5, 0.95, 6), np.full(6, 0.05), 10),
            CohortCurve('soybean', np.linspace(0.5, 0.9, 6), np.full(6, 0.1), 10),
        ]
        svg = render_confidence_svg(cohorts)
        self.assertTrue(svg.startswith('<svg'))
        self.assertEqual(svg.count('<polyline'), 2)
        self.assertEqual(svg.count('opacity="0.6"'), 12)
        self.assertIn('>corn<', svg)
        self.assertIn('>soybean<', svg)

    def test_labels_escaped(self):
        svg = render_confidence_svg([CohortCurve('a<b', np.full(2, 0.5), np.zeros(2), 1)])
        self.assertIn('a&lt;b', svg)

    def test_nothing_to_plot(self):
        with self.assertRaises(ValidationError):
            render_confidence_svg([])


class CoverCropDetectionTests(SimpleTestCase):
    def test_plain_crops(self):
        self.assertEqual(detect_cover_crop(noiseless_ndvi(CORN)), PRIMARY_ONLY)
        self.assertEqual(detect_cover_crop(noiseless_ndvi(SOYBEAN)), PRIMARY_ONLY)

    def test_cover_cropped(self):
        self.assertEqual(detect_cover_crop(noiseless_ndvi(CORN_COVER)), COVER_CROPPED)
        self.assertEqual(detect_cover_crop(noiseless_ndvi(SOYBEAN_COVER)), COVER_CROPPED)

    def test_evergreen_never_cover_cropped(self):
        self.assertEqual(detect_cover_crop(noiseless_ndvi(ALFALFA)), EVERGREEN)

    def test_require_dip(self):
        rule = CoverCropRule(require_dip=True)
        self.assertEqual(detect_cover_crop(noiseless_ndvi(CORN_COVER), rule), COVER_CROPPED)
        flat = np.concatenate([np.full(20, 0.2), np.full(26, 0.6)])
        self.assertEqual(detect_cover_crop(flat), COVER_CROPPED)
        self.assertEqual(detect_cover_crop(flat, rule), PRIMARY_ONLY)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            detect_cover_crop(np.full(30, 0.5))

    def test_rule_validation(self):
        with self.assertRaises(ValidationError):
            CoverCropRule(green_threshold=0.6, evergreen_min=0.55).validate()
        with self.assertRaises(ValidationError):
            cover_crop_rule_from_data({'green_threshold': 0.7})
        with self.assertRaises(ValidationError):
            cover_crop_rule_from_data({'growing_season_range': [30, 20]})
        self.assertEqual(cover_crop_rule_from_data({'post_window': 4}).post_window, 4)

    @given(st.lists(st.floats(0, 1), min_size=46, max_size=46))
    @settings(max_examples=200, deadline=None)
    def test_total_function(self, values):
        self.assertIn(detect_cover_crop(values), (PRIMARY_ONLY, COVER_CROPPED, EVERGREEN))

    def test_generated_mix(self):
        dataset = generate_dataset(COVER_CROP_MIX, DEFAULT_SCENARIOS[0], 3)
        detections = detect_dataset(dataset)
        expected = detections['class'].map(
            {'corn_cover': COVER_CROPPED, 'soybean_cover': COVER_CROPPED, 'alfalfa': EVERGREEN}
        ).fillna(PRIMARY_ONLY)
        for label in DETECTION_LABELS:
            predicted = detections['detection'] == label
            actual = expected == label
            hits = float((predicted & actual).sum())
            with self.subTest(label=label):
                self.assertGreaterEqual(hits / predicted.sum(), 0.9)
                self.assertGreaterEqual(hits / actual.sum(), 0.9)

    def test_dataset_without_raw(self):
        with self.assertRaises(ValidationError):
            detect_dataset(fixed_dataset([0]))


class CoverCropTableTests(SimpleTestCase):
    def test_one_percent(self):
        rows = cover_crop_table(['corn'] * 100, [COVER_CROPPED] + [PRIMARY_ONLY] * 99)
        self.assertEqual(rows[0].percent, 1.0)
        self.assertEqual((rows[-1].class_name, rows[-1].total_area), ('Total', 100.0))

    def test_no_cover_crops(self):
        rows = cover_crop_table(['corn', 'soybean', 'alfalfa'], [PRIMARY_ONLY, PRIMARY_ONLY, EVERGREEN])
        self.assertEqual([row.percent for row in rows], [0.0] * 4)

    def test_acreage_fixture(self):
        rows = cover_crop_table(['corn', 'corn'], [COVER_CROPPED, PRIMARY_ONLY], [4597, 1014653 - 4597])
        self.assertEqual(rows[0].total_area, 1014653)
        self.assertEqual(rows[0].percent, 0.45)
        text = format_cover_crop_table(rows)
        self.assertIn('1014653', text)
        self.assertIn('0.45', text)
        self.assertIn('4597', text)

    def test_frame_columns(self):
        frame = cover_crop_table_frame(cover_crop_table(['a', 'b'], [COVER_CROPPED, PRIMARY_ONLY]))
        self.assertEqual(list(frame.columns), ['class', 'total_area', 'cover_crop_percent', 'cover_crop_area'])
        self.assertEqual(frame['class'].tolist(), ['a', 'b', 'Total'])

    def test_misaligned(self):
        with self.assertRaises(DimensionError):
            cover_crop_table(['corn'], [PRIMARY_ONLY, PRIMARY_ONLY])

    @given(
        st.lists(
            st.tuples(st.sampled_from(['a', 'b', 'c']), st.booleans(), st.floats(0.1, 1e6)),
            min_size=1, max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_percentages_recompute(self, entries):
        labels = [e[0] for e in entries]
        detections = [COVER_CROPPED if e[1] else PRIMARY_ONLY for e in entries]
        rows = cover_crop_table(labels, detections, [e[2] for e in entries])
        for row in rows:
            self.assertLessEqual(abs(row.percent - 100 * row.cover_crop_area / row.total_area), 0.005 + 1e-9)


@tag('slow')
class EarlyDetectionAcceptanceTests(SimpleTestCase):
    def test_fast_greening_class_detected_first(self):
        dataset = generate_dataset({'corn': 200, 'soybean': 200}, NOISELESS, 5)
        model = train(dataset, TrainConfig(epochs=20), seed=5)
        summary = detection_summary(model, dataset).set_index('class')
        self.assertLess(summary.loc['corn', 'mean_step'], summary.loc['soybean', 'mean_step'])
        corn = cohort_confidence(model, dataset, 'corn')
        # step 10 ends before any green-up, step 26 sits after corn's
        self.assertGreaterEqual(corn.mean[26] - corn.mean[10], 0.2)

    def test_late_class_gains_confidence_after_harvest(self):
        dataset = generate_dataset(SUGARBEET_MIX_SMALL, NOISELESS, 6)
        model = train(dataset, TrainConfig(), seed=6)
        sugarbeet = cohort_confidence(model, dataset, 'sugarbeet')
        # sugarbeet and soybean share green-up; they part once soybean senesces
        self.assertGreaterEqual(sugarbeet.mean[-1] - sugarbeet.mean[22], 0.2)
        self.assertGreater(sugarbeet.mean[-1], sugarbeet.mean[28])
        summary = detection_summary(model, dataset).set_index('class')
        self.assertLess(summary.loc['corn', 'mean_step'], summary.loc['sugarbeet', 'mean_step'])
