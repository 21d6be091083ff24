from collections import Counter
from dataclasses import replace

import numpy as np
from core.exceptions import ValidationError
from core.serializers import validated
from core.rng import make_rng
from django.test import SimpleTestCase
from pipeline.sequences import ndvi_from_bands, ndvi_series

from .profiles import (
    ALFALFA, CORN, CORN_COVER, DEFAULT_SCENARIOS, SOYBEAN, SUGARBEET, SUGARBEET_MIX, SeasonScenario,
    composite_day, format_interval_dates,
)
from .serializers import GenerateRunSerializer, generate_plan, load_templates, scenario_from_data, templates_from_data
from .synth import (
    band_expand, divergence_window, double_logistic_ndvi, ndvi_curve,
    synth_dataset, synth_pixel,
)

NOISELESS = SeasonScenario('noiseless', noise_sigma=0.0)


class DoubleLogisticTests(SimpleTestCase):
    def test_far_before_greenup_is_baseline(self):
        self.assertAlmostEqual(double_logistic_ndvi(1, CORN), CORN.baseline_ndvi, delta=1e-3)

    def test_greenup_day_is_midpoint(self):
        midpoint = CORN.baseline_ndvi + 0.5 * (CORN.peak_ndvi - CORN.baseline_ndvi)
        self.assertAlmostEqual(double_logistic_ndvi(CORN.greenup_day, CORN), midpoint, delta=1e-3)

    def test_peak_inside_season(self):
        days = np.arange(1, 367)
        peak_day = days[np.argmax(ndvi_curve(days, CORN))]
        self.assertGreater(peak_day, CORN.greenup_day)
        self.assertLess(peak_day, CORN.senescence_day)

    def test_invalid_profile(self):
        with self.assertRaises(ValidationError):
            double_logistic_ndvi(100, replace(CORN, greenup_day=300))
        with self.assertRaises(ValidationError):
            double_logistic_ndvi(100, replace(CORN, baseline_ndvi=0.9))

    def test_day_out_of_range(self):
        with self.assertRaises(ValidationError):
            double_logistic_ndvi(0, CORN)
        with self.assertRaises(ValidationError):
            double_logistic_ndvi(367, CORN)

    def test_evergreen_holds_half_peak(self):
        days = np.arange(int(ALFALFA.greenup_day), 367)
        self.assertTrue(np.all(ndvi_curve(days, ALFALFA) >= 0.5 * ALFALFA.peak_ndvi))


class BandExpandTests(SimpleTestCase):
    def test_noiseless_inverse(self):
        for v in (0.0, 0.2, 0.5, 0.93):
            bands = band_expand(v, make_rng(1), noise_sigma=0.0)
            self.assertAlmostEqual(float(ndvi_from_bands(bands)), v, places=12)

    def test_red_proxy_maximal_at_zero(self):
        grid = band_expand(np.linspace(0, 1, 11), make_rng(1))
        self.assertEqual(int(np.argmax(grid[:, 1])), 0)
        self.assertEqual(int(np.argmax(grid[:, 0])), 10)

    def test_monte_carlo_mean(self):
        clean = band_expand(0.5, make_rng(0))
        noisy = band_expand(np.full(1000, 0.5), make_rng(3), noise_sigma=0.02)
        np.testing.assert_allclose(noisy.mean(axis=0), clean, atol=0.005)
        self.assertAlmostEqual(float(ndvi_from_bands(noisy).mean()), 0.5, delta=3 * 0.02)

    def test_reflectance_bounds(self):
        noisy = band_expand(np.linspace(0, 1, 200), make_rng(5), noise_sigma=0.3)
        self.assertTrue(np.all((noisy >= 0) & (noisy <= 1)))


class SynthPixelTests(SimpleTestCase):
    def test_deterministic(self):
        a = synth_pixel(CORN, DEFAULT_SCENARIOS[0], 42)
        b = synth_pixel(CORN, DEFAULT_SCENARIOS[0], 42)
        np.testing.assert_array_equal(a.sequence.values, b.sequence.values)

    def test_shape(self):
        pixel = synth_pixel(SOYBEAN, DEFAULT_SCENARIOS[0], 1)
        self.assertEqual(pixel.sequence.values.shape, (46, 7))
        self.assertEqual(pixel.scenario_tag, 'in_domain')

    def test_shift_moves_peak_later(self):
        base = ndvi_series(synth_pixel(CORN, NOISELESS, 3).sequence)
        shifted = ndvi_series(synth_pixel(CORN, replace(NOISELESS, planting_shift_days=16), 3).sequence)
        self.assertGreaterEqual(int(np.argmax(shifted)), int(np.argmax(base)) + 1)

    def test_peak_monotone_in_shift(self):
        peaks = [
            int(np.argmax(ndvi_series(synth_pixel(SOYBEAN, replace(NOISELESS, planting_shift_days=s), 0).sequence)))
            for s in (-40, -16, -3, 0, 5, 8, 16, 33, 59)
        ]
        self.assertEqual(peaks, sorted(peaks))

    def test_cover_crop_stays_green(self):
        cover = ndvi_series(synth_pixel(CORN_COVER, NOISELESS, 0).sequence)
        plain = ndvi_series(synth_pixel(CORN, NOISELESS, 0).sequence)
        self.assertTrue(np.all(cover[-5:] > 0.4))
        self.assertTrue(np.all(plain[-5:] < 0.25))

    def test_clouds_replace_composites(self):
        pixel = synth_pixel(CORN, SeasonScenario('cloudy', cloud_drop_prob=0.5), 9)
        dark = np.all(pixel.sequence.values <= 0.12, axis=1)
        self.assertTrue(dark.any())
        self.assertFalse(dark.all())

    def test_shift_limit(self):
        with self.assertRaises(ValidationError):
            synth_pixel(CORN, SeasonScenario('far', planting_shift_days=60), 0)


class SynthDatasetTests(SimpleTestCase):
    def test_balanced_sample_sizes(self):
        pixels = synth_dataset({'corn': 500, 'soybean': 500}, DEFAULT_SCENARIOS[0], 1)
        self.assertEqual(len(pixels), 1000)
        self.assertEqual(Counter(p.class_label for p in pixels), {0: 500, 1: 500})
        self.assertEqual(len({p.pixel_id for p in pixels}), 1000)

    def test_single_pixel(self):
        pixels = synth_dataset({'corn': 1}, DEFAULT_SCENARIOS[0], 1)
        self.assertEqual(len(pixels), 1)
        self.assertEqual(pixels[0].class_label, 0)

    def test_seeds_change_draws_not_counts(self):
        a = synth_dataset({'corn': 20, 'soybean': 10}, DEFAULT_SCENARIOS[0], 1)
        b = synth_dataset({'corn': 20, 'soybean': 10}, DEFAULT_SCENARIOS[0], 2)
        self.assertEqual(Counter(p.class_label for p in a), Counter(p.class_label for p in b))
        self.assertFalse(np.array_equal(a[0].sequence.values, b[0].sequence.values))

    def test_same_seed_same_order(self):
        a = synth_dataset({'corn': 5, 'soybean': 5}, DEFAULT_SCENARIOS[1], 11)
        b = synth_dataset({'corn': 5, 'soybean': 5}, DEFAULT_SCENARIOS[1], 11)
        self.assertEqual([p.class_label for p in a], [p.class_label for p in b])
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.sequence.values, y.sequence.values)

    def test_empty_mix(self):
        with self.assertRaises(ValidationError):
            synth_dataset({}, DEFAULT_SCENARIOS[0], 1)

    def test_explicit_class_names(self):
        pixels = synth_dataset({'soybean': 3}, DEFAULT_SCENARIOS[0], 1, class_names=['corn', 'soybean'])
        self.assertEqual({p.class_label for p in pixels}, {1})

    def test_mid_season_threshold_separates(self):
        pixels = synth_dataset({'corn': 100, 'soybean': 100}, NOISELESS, 5)
        ndvi = np.stack([ndvi_series(p.sequence) for p in pixels])
        labels = np.array([p.class_label for p in pixels])
        best = 0.0
        for k in range(ndvi.shape[1]):
            for threshold in np.unique(ndvi[:, k]):
                guess = np.where(ndvi[:, k] >= threshold, 0, 1)
                best = max(best, float(np.mean(guess == labels)))
        self.assertGreaterEqual(best, 0.95)


class CalendarTests(SimpleTestCase):
    def test_composite_day(self):
        self.assertEqual(composite_day(0), 1)
        self.assertEqual(composite_day(45), 361)

    def test_interval_dates(self):
        self.assertEqual(format_interval_dates((20, 20)), "Jun 09 - Jul 10")

    def test_divergence_window_corn_soybean(self):
        self.assertEqual(divergence_window(CORN, SOYBEAN), (19, 24))

    def test_sugarbeet_parts_from_soybean_late(self):
        first, _ = divergence_window(SOYBEAN, SUGARBEET)
        self.assertGreater(first, divergence_window(CORN, SOYBEAN)[1])

    def test_identical_templates_never_diverge(self):
        self.assertIsNone(divergence_window(CORN, CORN))


class TemplateConfigTests(SimpleTestCase):
    def test_unknown_key_rejected(self):
        with self.assertRaisesMessage(ValidationError, "colour"):
            scenario_from_data({'name': 'x', 'colour': 'green'})

    def test_shift_bound(self):
        with self.assertRaises(ValidationError):
            scenario_from_data({'name': 'x', 'planting_shift_days': 75})

    def test_scenario_defaults(self):
        self.assertEqual(scenario_from_data({'name': 'x'}), SeasonScenario('x'))

    def test_template_override(self):
        data = dict(SOYBEAN.to_dict(), greenup_day=180)
        templates = templates_from_data([data])
        self.assertEqual(templates['soybean'].greenup_day, 180)
        self.assertEqual(templates['corn'], CORN)

    def test_cover_template_requires_cover_fields(self):
        data = dict(CORN.to_dict(), post_harvest_green=True)
        with self.assertRaises(ValidationError):
            templates_from_data([data])

    def test_load_templates_file(self):
        import json
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'templates.json'
            path.write_text(json.dumps({'templates': [dict(CORN.to_dict(), peak_ndvi=0.9)]}))
            self.assertEqual(load_templates(path)['corn'].peak_ndvi, 0.9)


class GeneratePlanTests(SimpleTestCase):
    def plan(self, **data):
        return generate_plan(validated(GenerateRunSerializer, data))

    def test_defaults(self):
        mix, class_names, scenarios, _ = self.plan()
        self.assertEqual(mix, {'corn': 500, 'soybean': 500})
        self.assertEqual(class_names, ['corn', 'soybean'])
        self.assertEqual(scenarios, DEFAULT_SCENARIOS)

    def test_noise_override_applies_to_every_scenario(self):
        _, _, scenarios, _ = self.plan(noise_sigma=0.0, cloud_drop_prob=0.1)
        self.assertEqual([s.planting_shift_days for s in scenarios], [0, 8, 16])
        self.assertTrue(all(s.noise_sigma == 0.0 and s.cloud_drop_prob == 0.1 for s in scenarios))

    def test_sugarbeet_mix(self):
        mix, class_names, _, _ = self.plan(mix='sugarbeet', count=9)
        self.assertEqual(class_names, list(SUGARBEET_MIX))
        self.assertEqual(mix, {'corn': 3, 'soybean': 3, 'sugarbeet': 3})

    def test_cloud_probability_must_stay_below_one(self):
        with self.assertRaises(ValidationError):
            self.plan(cloud_drop_prob=1.0)

    def test_duplicate_scenario_names(self):
        with self.assertRaisesMessage(ValidationError, "unique"):
            self.plan(scenarios=[{'name': 'a'}, {'name': 'a', 'planting_shift_days': 8}])
