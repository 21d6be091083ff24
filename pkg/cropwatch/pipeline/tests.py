import tempfile
from pathlib import Path

import numpy as np
from core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from phenology.profiles import DEFAULT_SCENARIOS
from phenology.synth import synth_dataset

from .datasets import Dataset, dataset_digest, load_dataset, meta_path, save_dataset, slice_steps, split
from .sequences import SpectralSequence, composites_to_steps, ndvi_series, window_sequence

HEADER = "pixel_id,label,composite_index,band_index,value\n"


def synthetic(mix=None, seed=1, scenario=DEFAULT_SCENARIOS[0]):
    mix = mix or {'corn': 5, 'soybean': 5}
    return Dataset.from_records(synth_dataset(mix, scenario, seed), list(mix))


class WindowTests(SimpleTestCase):
    def test_default_layout(self):
        windowed = window_sequence(SpectralSequence(np.zeros((46, 7))))
        self.assertEqual(windowed.steps.shape, (43, 28))

    def test_identity_window(self):
        values = np.arange(15.0).reshape(5, 3) / 20
        windowed = window_sequence(SpectralSequence(values), 1, 1)
        np.testing.assert_array_equal(windowed.steps, values)

    def test_hand_enumerated(self):
        windowed = window_sequence(SpectralSequence(np.arange(1.0, 6.0)[:, None]), 2, 1)
        np.testing.assert_array_equal(windowed.steps, [[1, 2], [2, 3], [3, 4], [4, 5]])

    def test_composite_then_band_order(self):
        values = np.array([[1, 10], [2, 20], [3, 30]], dtype=float)
        windowed = window_sequence(SpectralSequence(values), 2, 1)
        np.testing.assert_array_equal(windowed.steps[0], [1, 10, 2, 20])

    def test_stride(self):
        windowed = window_sequence(SpectralSequence(np.zeros((10, 2))), 4, 3)
        self.assertEqual(windowed.length, 3)

    def test_window_larger_than_sequence(self):
        with self.assertRaises(ValidationError):
            window_sequence(SpectralSequence(np.zeros((3, 7))), 4, 1)

    @given(st.integers(4, 30), st.integers(1, 4), st.integers(1, 3))
    @settings(max_examples=60, deadline=None)
    def test_every_value_kept(self, length, window, stride):
        if window > length:
            return
        values = np.arange(float(length))[:, None]
        steps = window_sequence(SpectralSequence(values), window, stride).steps
        self.assertEqual(steps.shape[0], (length - window) // stride + 1)
        covered = set(steps.reshape(-1).tolist())
        last = (steps.shape[0] - 1) * stride + window
        self.assertEqual(covered, set(range(last)))

    def test_composites_to_steps(self):
        self.assertEqual(composites_to_steps(10, 12), (7, 12))
        self.assertEqual(composites_to_steps(0, 1, steps=43), (0, 1))
        self.assertEqual(composites_to_steps(40, 45, steps=43), (37, 42))

    def test_ndvi_needs_two_bands(self):
        with self.assertRaises(ValidationError):
            ndvi_series(SpectralSequence(np.zeros((5, 1))))


class PersistenceTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, body):
        path = self.dir / 'data.csv'
        path.write_text(HEADER + body)
        return path

    def test_round_trip(self):
        dataset = synthetic()
        path = save_dataset(dataset, self.dir / 'set.csv')
        loaded = load_dataset(path)
        self.assertEqual(loaded.class_names, dataset.class_names)
        self.assertEqual(loaded.pixel_ids, dataset.pixel_ids)
        np.testing.assert_array_equal(loaded.features, dataset.features)
        np.testing.assert_array_equal(loaded.labels, dataset.labels)
        self.assertEqual(dataset_digest(loaded), dataset_digest(dataset))
        self.assertTrue(meta_path(path).exists())

    def test_save_is_byte_stable(self):
        first = save_dataset(synthetic(), self.dir / 'a.csv').read_bytes()
        second = save_dataset(synthetic(), self.dir / 'b.csv').read_bytes()
        self.assertEqual(first, second)

    def test_value_out_of_range(self):
        path = self.write("p1,corn,0,0,0.5\np1,corn,1,0,1.7\n")
        with self.assertRaisesMessage(ValidationError, "line 3: value out of [0,1]"):
            load_dataset(path, window_composites=1)

    def test_inconsistent_lengths(self):
        rows = [f"a,corn,{i},0,0.5" for i in range(5)] + [f"b,corn,{i},0,0.5" for i in range(6)]
        path = self.write("\n".join(rows) + "\n")
        with self.assertRaises(ValidationError) as ctx:
            load_dataset(path, window_composites=1)
        self.assertIn("T_raw=5", str(ctx.exception))
        self.assertIn("T_raw=6", str(ctx.exception))

    def test_unknown_label(self):
        path = self.write("p1,corn,0,0,0.5\n")
        with self.assertRaisesMessage(ValidationError, "unknown class label 'corn'"):
            load_dataset(path, class_names=['soybean'], window_composites=1)

    def test_bad_header(self):
        path = self.dir / 'bad.csv'
        path.write_text("id,label,t,b,v\np1,corn,0,0,0.5\n")
        with self.assertRaisesMessage(ValidationError, "header"):
            load_dataset(path)

    def test_missing_cell(self):
        path = self.write("p1,corn,0,0,0.5\np1,corn,1,1,0.5\n")
        with self.assertRaisesMessage(ValidationError, "full 2 x 2 grid"):
            load_dataset(path, window_composites=1)

    def test_non_numeric_value(self):
        path = self.write("p1,corn,0,0,abc\n")
        with self.assertRaisesMessage(ValidationError, "line 2: value is not a number"):
            load_dataset(path, window_composites=1)


class SplitTests(SimpleTestCase):
    def test_stratified_halves(self):
        dataset = synthetic({'corn': 500, 'soybean': 500})
        train, test = split(dataset, (0.5, 0.5), seed=3)
        self.assertEqual(train.class_counts(), {'corn': 250, 'soybean': 250})
        self.assertEqual(test.class_counts(), {'corn': 250, 'soybean': 250})

    def test_deterministic(self):
        dataset = synthetic({'corn': 20, 'soybean': 20})
        a = split(dataset, (0.7, 0.3), seed=5)
        b = split(dataset, (0.7, 0.3), seed=5)
        self.assertEqual([p.pixel_ids for p in a], [p.pixel_ids for p in b])

    def test_too_few_pixels(self):
        dataset = synthetic({'corn': 1, 'soybean': 5})
        with self.assertRaises(ValidationError):
            split(dataset, (0.5, 0.5), seed=1)

    def test_bad_fractions(self):
        with self.assertRaises(ValidationError):
            split(synthetic(), (0.8, 0.4), seed=1)

    @given(
        st.integers(2, 30), st.integers(2, 30),
        st.floats(0.1, 0.9), st.integers(0, 2 ** 64 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_partition_law(self, corn, soybean, fraction, seed):
        dataset = synthetic({'corn': corn, 'soybean': soybean}, seed=7)
        parts = split(dataset, (fraction, 1.0 - fraction), seed=seed)
        ids = [set(p.pixel_ids) for p in parts]
        self.assertFalse(ids[0] & ids[1])
        self.assertEqual(ids[0] | ids[1], set(dataset.pixel_ids))
        for name, total in dataset.class_counts().items():
            self.assertLessEqual(abs(parts[0].class_counts()[name] - fraction * total), 1)


class SliceTests(SimpleTestCase):
    def test_full_interval_is_identity(self):
        dataset = synthetic()
        sliced = slice_steps(dataset, (0, dataset.shape[0] - 1))
        np.testing.assert_array_equal(sliced.features, dataset.features)

    def test_single_step(self):
        dataset = synthetic()
        sliced = slice_steps(dataset, (10, 10))
        self.assertEqual(sliced.shape, (1, 28))
        np.testing.assert_array_equal(sliced.features[:, 0], dataset.features[:, 10])

    def test_bad_interval(self):
        with self.assertRaises(ValidationError):
            slice_steps(synthetic(), (5, 4))
        with self.assertRaises(ValidationError):
            slice_steps(synthetic(), (40, 43))
