import io
import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from classifier.bundle import ModelBundle
from classifier.training import TrainConfig
from cropwatch import settings as project_settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from evaluation.reports import REPORT_COLUMNS
from hypothesis import given, strategies as st
from phenology.synth import distribute_count
from pipeline.datasets import load_dataset

from .artifacts import RunArtifacts, atomic_write_text
from .digests import canonical_json, digest_json, fnv1a_64
from .exceptions import ValidationError
from .management.base import resolve_seed
from .management.commands.adapt import attention_lags
from .models import RunRecord
from .rng import derive_seed, make_rng, splitmix64
from .serializers import build_config, load_config_file

TINY_TRAIN = {'epochs': 2, 'hidden_dim': 4, 'batch_size': 8}


def run(name, *args):
    out = io.StringIO()
    call_command(name, *args, stdout=out, stderr=io.StringIO())
    return out.getvalue()


def snapshot(directory):
    return {path.name: path.read_bytes() for path in sorted(Path(directory).iterdir()) if path.is_file()}


def write_config(directory, name, payload):
    path = Path(directory) / name
    path.write_text(json.dumps(payload))
    return str(path)


class DigestTests(SimpleTestCase):
    def test_fnv1a_reference_values(self):
        self.assertEqual(fnv1a_64(b''), 'cbf29ce484222325')
        self.assertEqual(fnv1a_64(b'a'), 'af63dc4c8601ec8c')

    def test_canonical_json_is_key_order_free(self):
        self.assertEqual(canonical_json({'b': 1, 'a': [1, 2]}), canonical_json({'a': [1, 2], 'b': 1}))
        self.assertTrue(canonical_json({}).endswith("\n"))
        self.assertEqual(digest_json({'b': 1, 'a': 2}), digest_json({'a': 2, 'b': 1}))


class RngTests(SimpleTestCase):
    def test_splitmix_reference(self):
        # first output of the reference generator seeded with 0
        self.assertEqual(splitmix64(0), 0xE220A8397B1DCDAF)

    def test_derived_seeds_separate_purposes(self):
        self.assertNotEqual(derive_seed(1, 'split'), derive_seed(1, 'shuffle'))
        self.assertEqual(derive_seed(1, 'split', 3), derive_seed(1, 'split', 3))

    @given(st.integers(min_value=0, max_value=(1 << 64) - 1))
    def test_streams_reproducible(self, seed):
        np.testing.assert_array_equal(make_rng(seed, 'x').random(4), make_rng(seed, 'x').random(4))


class ArtifactTests(SimpleTestCase):
    def test_atomic_write_leaves_no_temp_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            atomic_write_text(Path(tmp) / 'nested' / 'a.txt', 'hello\n')
            self.assertEqual([p.name for p in (Path(tmp) / 'nested').iterdir()], ['a.txt'])

    def test_manifest_tracks_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            artifacts = RunArtifacts('demo', tmp, 7, {'x': 1})
            artifacts.write_text('out.txt', 'abc')
            artifacts.add_input('cfg', digest='0' * 16)
            artifacts.write_manifest()
            manifest = json.loads((Path(tmp) / 'demo.manifest.json').read_text())
        self.assertEqual(manifest['outputs'], {'out.txt': fnv1a_64(b'abc')})
        self.assertEqual(manifest['inputs'], {'cfg': '0' * 16})
        self.assertEqual(manifest['seed'], 7)
        self.assertNotIn('wall_time_seconds', manifest)


class ConfigTests(SimpleTestCase):
    def test_settings_carry_no_web_secrets(self):
        self.assertFalse(hasattr(project_settings, 'SECRET_KEY'))
        self.assertFalse(hasattr(project_settings, 'ALLOWED_HOSTS'))

    def test_build_config_ignores_foreign_keys(self):
        config = build_config(TrainConfig, {'epochs': 3, 'data': 'x.csv', 'window_composites': 4})
        self.assertEqual(config.epochs, 3)

    def test_load_config_file(self):
        self.assertEqual(load_config_file(None), {})
        with tempfile.TemporaryDirectory() as tmp:
            bad = Path(tmp) / 'bad.json'
            bad.write_text('{not json')
            with self.assertRaises(ValidationError):
                load_config_file(bad)
            bad.write_text('[1, 2]')
            with self.assertRaises(ValidationError):
                load_config_file(bad)

    @override_settings(CROPWATCH_DEFAULT_SEED=11)
    def test_seed_precedence(self):
        self.assertEqual(resolve_seed(None, None), 11)
        self.assertEqual(resolve_seed(None, 5), 5)
        self.assertEqual(resolve_seed(3, 5), 3)
        for bad in (-1, 1 << 64, '3', True):
            with self.assertRaises(ValidationError):
                resolve_seed(bad, None)

    def test_distribute_count(self):
        self.assertEqual(distribute_count({'a': 5, 'b': 5, 'c': 5}, 7), {'a': 3, 'b': 2, 'c': 2})
        self.assertEqual(distribute_count({'a': 5, 'b': 5}, 1), {'a': 1})
        with self.assertRaises(ValidationError):
            distribute_count({'a': 1}, 0)


class AttentionLagTests(SimpleTestCase):
    def test_lags_against_source(self):
        source = np.exp(-0.5 * ((np.arange(20) - 8.0) / 1.5) ** 2)
        frame = pd.DataFrame({
            'step': np.arange(1, 21), 'source': source,
            'target': np.roll(source, 3), 'target_adapted': np.roll(source, 1),
        })
        self.assertEqual(attention_lags(frame), {'target': 3, 'target_adapted': 1})

    def test_short_sequences(self):
        frame = pd.DataFrame({
            'step': [1, 2], 'source': [0.8, 0.2], 'target': [0.2, 0.8], 'target_adapted': [0.8, 0.2],
        })
        self.assertEqual(attention_lags(frame), {'target': 1, 'target_adapted': 0})


class GenerateCommandTests(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def test_default_scenarios(self):
        out = run('generate', '--out', str(self.tmp / 'a'), '--count', '10', '--seed', '1')
        names = sorted(p.name for p in (self.tmp / 'a').iterdir())
        self.assertEqual(names, [
            'generate.config.json', 'generate.manifest.json',
            'in_domain.csv', 'in_domain.meta.json', 'shift_16.csv', 'shift_16.meta.json',
            'shift_8.csv', 'shift_8.meta.json',
        ])
        dataset = load_dataset(self.tmp / 'a' / 'in_domain.csv')
        self.assertEqual(len(dataset), 10)
        self.assertEqual(dataset.class_names, ('corn', 'soybean'))
        self.assertIn(dataset.digest, out)

    def test_rerun_is_byte_identical(self):
        run('generate', '--out', str(self.tmp / 'a'), '--count', '6', '--seed', '3')
        run('generate', '--out', str(self.tmp / 'b'), '--count', '6', '--seed', '3')
        run('generate', '--out', str(self.tmp / 'c'), '--count', '6', '--seed', '4')
        first, second, third = (snapshot(self.tmp / name) for name in 'abc')
        self.assertEqual(first, second)
        self.assertNotEqual(first['in_domain.csv'], third['in_domain.csv'])

    def test_flags_beat_config_file(self):
        config = write_config(self.tmp, 'gen.json', {'count': 6, 'seed': 9, 'mix': 'covercrop'})
        run('generate', '--config', config, '--count', '7', '--out', str(self.tmp / 'a'))
        echo = json.loads((self.tmp / 'a' / 'generate.config.json').read_text())
        self.assertEqual((echo['count'], echo['seed'], echo['mix']), (7, 9, 'covercrop'))
        counts = load_dataset(self.tmp / 'a' / 'in_domain.csv').class_counts()
        self.assertEqual(counts, {'corn': 2, 'soybean': 2, 'corn_cover': 1, 'soybean_cover': 1, 'alfalfa': 1})

    def test_custom_scenario(self):
        config = write_config(
            self.tmp, 'gen.json', {'count': 4, 'scenarios': [{'name': 'late', 'planting_shift_days': 12}]},
        )
        run('generate', '--config', config, '--out', str(self.tmp / 'a'))
        self.assertTrue((self.tmp / 'a' / 'late.csv').exists())
        self.assertFalse((self.tmp / 'a' / 'in_domain.csv').exists())

    def test_invalid_config_exits_1(self):
        config = write_config(self.tmp, 'gen.json', {'colour': 'red'})
        with self.assertRaises(CommandError) as caught:
            run('generate', '--config', config, '--out', str(self.tmp / 'a'))
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn('colour', str(caught.exception))

    def test_shift_out_of_range_exits_1(self):
        config = write_config(self.tmp, 'gen.json', {'scenarios': [{'name': 'x', 'planting_shift_days': 60}]})
        with self.assertRaises(CommandError) as caught:
            run('generate', '--config', config, '--out', str(self.tmp / 'a'))
        self.assertEqual(caught.exception.returncode, 1)

    def test_missing_config_exits_2(self):
        with self.assertRaises(CommandError) as caught:
            run('generate', '--config', str(self.tmp / 'nope.json'), '--out', str(self.tmp / 'a'))
        self.assertEqual(caught.exception.returncode, 2)

    def test_run_record(self):
        run('generate', '--out', str(self.tmp / 'a'), '--count', '4', '--seed', '5')
        record = RunRecord.objects.get()
        manifest = json.loads((self.tmp / 'a' / 'generate.manifest.json').read_text())
        self.assertEqual((record.command, record.seed, record.status), ('generate', '5', 'SUCCESS'))
        self.assertEqual(record.config_digest, manifest['config_digest'])
        self.assertEqual(record.output_digests, manifest['outputs'])
        self.assertGreaterEqual(record.wall_time_seconds, 0.0)


class PipelineCommandTests(TestCase):
    """generate -> train -> adapt / evaluate / early on a tiny synthetic suite."""

    @classmethod
    def setUpTestData(cls):
        tmp = tempfile.TemporaryDirectory()
        cls.addClassCleanup(tmp.cleanup)
        cls.tmp = Path(tmp.name)
        cls.data = cls.tmp / 'data'
        run('generate', '--out', str(cls.data), '--count', '12', '--seed', '2')
        cls.train_config = write_config(cls.tmp, 'train.json', TINY_TRAIN)
        cls.model_dir = cls.tmp / 'model'
        run(
            'train', '--config', cls.train_config, '--data', str(cls.data / 'in_domain.csv'),
            '--out', str(cls.model_dir), '--seed', '2',
        )
        cls.model = cls.model_dir / 'model.json'

    def out(self, name):
        return str(self.tmp / name)

    def test_train_outputs(self):
        model = ModelBundle.load(self.model)
        dataset = load_dataset(self.data / 'in_domain.csv')
        self.assertEqual(model.train_digest, dataset.digest)
        self.assertEqual(model.hidden_dim, 4)
        periods = pd.read_csv(self.model_dir / 'periods.csv')
        self.assertEqual(list(periods.columns), ['first_step', 'last_step', 'mass', 'dates'])
        manifest = json.loads((self.model_dir / 'train.manifest.json').read_text())
        self.assertEqual(set(manifest['outputs']), {'model.json', 'periods.csv', 'train.config.json'})

    def test_train_is_reproducible(self):
        run(
            'train', '--config', self.train_config, '--data', str(self.data / 'in_domain.csv'),
            '--out', self.out('again'), '--seed', '2',
        )
        self.assertEqual(snapshot(self.model_dir), snapshot(self.out('again')))

    def test_train_missing_data_exits_2(self):
        with self.assertRaises(CommandError) as caught:
            run('train', '--config', self.train_config, '--data', self.out('missing.csv'), '--out', self.out('x'))
        self.assertEqual(caught.exception.returncode, 2)
        self.assertEqual(RunRecord.objects.filter(command='train', status='FAILED').count(), 1)

    def test_train_requires_data(self):
        with self.assertRaises(CommandError) as caught:
            run('train', '--out', self.out('x'))
        self.assertEqual(caught.exception.returncode, 1)

    def test_adapt(self):
        out = run(
            'adapt', '--model', str(self.model), '--source', str(self.data / 'in_domain.csv'),
            '--target', str(self.data / 'shift_16.csv'), '--epochs', '1', '--out', self.out('adapt'),
        )
        self.assertIn('target AUC', out)
        self.assertRegex(out, r'attention lag [+-]\d+ -> [+-]\d+ steps')
        payload = json.loads(Path(self.out('adapt'), 'adapted.json').read_text())
        self.assertEqual(payload['source_digest'], ModelBundle.load(self.model).digest)
        attention = pd.read_csv(Path(self.out('adapt'), 'attention.csv'))
        self.assertEqual(list(attention.columns), ['step', 'source', 'target', 'target_adapted'])
        np.testing.assert_allclose(attention['source'].sum(), 1.0, atol=1e-5)

    def test_adapt_refuses_wrong_lineage(self):
        with self.assertRaises(CommandError) as caught:
            run(
                'adapt', '--model', str(self.model), '--source', str(self.data / 'shift_8.csv'),
                '--target', str(self.data / 'shift_16.csv'), '--epochs', '1', '--out', self.out('adapt'),
            )
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn('trained on dataset', str(caught.exception))

    def test_evaluate(self):
        config = write_config(self.tmp, 'eval.json', {'ann': {'hidden_dim': 4, 'epochs': 2}})
        out = run(
            'evaluate', '--config', config, '--train', str(self.data / 'in_domain.csv'),
            '--test', f"in_domain={self.data / 'in_domain.csv'}", '--test', f"shift_16={self.data / 'shift_16.csv'}",
            '--methods', 'ann,knn_dtw', '--out', self.out('eval'),
        )
        report = pd.read_csv(Path(self.out('eval'), 'report.csv'))
        self.assertEqual(list(report.columns), REPORT_COLUMNS)
        self.assertEqual(len(report), 4)
        self.assertEqual(report['method'].tolist(), ['ann', 'ann', 'knn_dtw', 'knn_dtw'])
        self.assertIn('shift_16', out)
        self.assertIn('AUC', out)

    def test_evaluate_bad_test_flag(self):
        with self.assertRaises(CommandError) as caught:
            run('evaluate', '--train', str(self.data / 'in_domain.csv'), '--test', 'no-equals', '--out', self.out('e'))
        self.assertEqual(caught.exception.returncode, 1)

    def test_evaluate_unknown_method(self):
        with self.assertRaises(CommandError) as caught:
            run(
                'evaluate', '--train', str(self.data / 'in_domain.csv'),
                '--test', f"a={self.data / 'in_domain.csv'}", '--methods', 'svm', '--out', self.out('e'),
            )
        self.assertEqual(caught.exception.returncode, 1)

    def test_early(self):
        out = run(
            'early', '--model', str(self.model), '--data', str(self.data / 'in_domain.csv'), '--out', self.out('early'),
        )
        confidence = pd.read_csv(Path(self.out('early'), 'confidence.csv'))
        dataset = load_dataset(self.data / 'in_domain.csv')
        self.assertEqual(len(confidence), dataset.shape[0] * 2)
        self.assertEqual(confidence['step'].min(), 1)
        svg = Path(self.out('early'), 'confidence.svg').read_text()
        self.assertTrue(svg.lstrip().startswith('<svg'))
        self.assertIn('opacity="0.6"', svg)
        detections = pd.read_csv(Path(self.out('early'), 'detections.csv'))
        self.assertEqual(len(detections), len(dataset))
        self.assertIn('detected', out)

    def test_covercrops_with_model_labels(self):
        run(
            'covercrops', '--model', str(self.model), '--data', str(self.data / 'in_domain.csv'),
            '--out', self.out('cc'),
        )
        table = pd.read_csv(Path(self.out('cc'), 'cover_crop_table.csv'))
        self.assertLessEqual(set(table['class']), {'corn', 'soybean', 'Total'})
        self.assertEqual(table['total_area'].iloc[-1], 12)
        manifest = json.loads(Path(self.out('cc'), 'covercrops.manifest.json').read_text())
        self.assertEqual(set(manifest['inputs']), {'data', 'model'})

    def test_early_rejects_bad_threshold(self):
        with self.assertRaises(CommandError) as caught:
            run(
                'early', '--model', str(self.model), '--data', str(self.data / 'in_domain.csv'),
                '--threshold', '1.5', '--out', self.out('early'),
            )
        self.assertEqual(caught.exception.returncode, 1)


class CoverCropCommandTests(TestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)
        config = write_config(self.tmp, 'gen.json', {
            'mix': 'covercrop', 'count': 20, 'scenarios': [{'name': 'season', 'noise_sigma': 0.0}],
        })
        run('generate', '--config', config, '--out', str(self.tmp / 'data'), '--seed', '6')
        self.season = str(self.tmp / 'data' / 'season.csv')

    def test_table(self):
        out = run('covercrops', '--data', self.season, '--out', str(self.tmp / 'cc'))
        table = pd.read_csv(self.tmp / 'cc' / 'cover_crop_table.csv')
        self.assertEqual(list(table.columns), ['class', 'total_area', 'cover_crop_percent', 'cover_crop_area'])
        self.assertEqual(table['class'].iloc[-1], 'Total')
        self.assertLessEqual(set(table['class'][:-1]), {'corn', 'soybean', 'alfalfa'})
        self.assertNotIn('corn_cover', table['class'].tolist())
        self.assertEqual(table['total_area'].iloc[-1], 20)
        detections = pd.read_csv(self.tmp / 'cc' / 'detections.csv')
        cover = detections[detections['class'].isin(['corn_cover', 'soybean_cover'])]
        self.assertGreaterEqual((cover['detection'] == 'cover_cropped').mean(), 0.75)
        alfalfa = detections.loc[detections['class'] == 'alfalfa', 'detection']
        self.assertGreaterEqual((alfalfa == 'evergreen').mean(), 0.75)
        self.assertIn('Total', out)

    def test_pixel_area_scales_table(self):
        config = write_config(self.tmp, 'cc.json', {'pixel_area': 61.78})
        run('covercrops', '--config', config, '--data', self.season, '--out', str(self.tmp / 'cc'))
        table = pd.read_csv(self.tmp / 'cc' / 'cover_crop_table.csv')
        self.assertAlmostEqual(table['total_area'].iloc[-1], 20 * 61.78)

    def test_short_series_exits_1(self):
        config = write_config(self.tmp, 'cc.json', {'harvest_step': 44})
        with self.assertRaises(CommandError) as caught:
            run('covercrops', '--config', config, '--data', self.season, '--out', str(self.tmp / 'cc'))
        self.assertEqual(caught.exception.returncode, 1)
