"""
Generate synthetic phenology datasets, one CSV per season scenario.
"""
from core.management.base import RunCommand
from phenology.serializers import MIXES, GenerateRunSerializer, generate_plan
from phenology.synth import generate_dataset
from pipeline.datasets import meta_path, save_dataset


class Command(RunCommand):
    help = "Write a synthetic dataset CSV (plus .meta.json) for every scenario."
    name = 'generate'
    serializer_class = GenerateRunSerializer
    flags = {'count': 'count', 'mix': 'mix', 'noise_sigma': 'noise_sigma', 'cloud_drop_prob': 'cloud_drop_prob'}

    def add_run_arguments(self, parser):
        parser.add_argument('--count', type=int, help="Total pixels per scenario, spread evenly over the mix.")
        parser.add_argument('--mix', choices=sorted(MIXES), help="Named class mix.")
        parser.add_argument('--noise-sigma', type=float, help="Override noise_sigma in every scenario.")
        parser.add_argument('--cloud-drop-prob', type=float, help="Override cloud_drop_prob in every scenario.")

    def run(self, values, artifacts):
        class_mix, class_names, scenarios, templates = generate_plan(values)
        for scenario in scenarios:
            dataset = generate_dataset(
                class_mix, scenario, artifacts.seed, templates=templates, class_names=class_names,
            )
            path = save_dataset(dataset, artifacts.path(f"{scenario.name}.csv"))
            artifacts.track_file(path.name)
            artifacts.track_file(meta_path(path).name)
            self.stdout.write(f"{scenario.name}\t{len(dataset)} pixels\t{dataset.digest}\t{path}")
