"""
Cover-crop detection and the per-crop cover-crop area table.
"""
import numpy as np
from classifier.bundle import ModelBundle
from classifier.training import predict
from core.management.base import RunCommand
from core.serializers import build_config
from phenology.profiles import DEFAULT_TEMPLATES
from pipeline.serializers import load_with_layout
from temporal.covercrops import (
    CoverCropRule, cover_crop_table, cover_crop_table_frame, detect_dataset, format_cover_crop_table,
)
from temporal.serializers import CoverCropRunSerializer


def primary_crop(class_name):
    """Cover-cropped variants report under the crop planted before them."""
    template = DEFAULT_TEMPLATES.get(class_name)
    return template.primary if template is not None else class_name


class Command(RunCommand):
    help = "Classify every pixel as primary_only / cover_cropped / evergreen and tabulate areas per crop."
    name = 'covercrops'
    serializer_class = CoverCropRunSerializer
    flags = {'data': 'data', 'model': 'model', 'harvest_step': 'harvest_step', 'require_dip': 'require_dip'}

    def add_run_arguments(self, parser):
        parser.add_argument('--data', help="Dataset CSV with raw composites.")
        parser.add_argument('--model', help="Optional model.json; crop labels then come from its predictions.")
        parser.add_argument('--harvest-step', type=int)
        parser.add_argument('--require-dip', action='store_true', default=None)

    def run(self, values, artifacts):
        rule = build_config(CoverCropRule, values).validate()
        dataset = load_with_layout(values['data'], values)
        artifacts.add_input('data', values['data'])
        detections = detect_dataset(dataset, rule)

        if values.get('model'):
            model = ModelBundle.load(values['model'])
            artifacts.add_input('model', values['model'])
            labels = np.asarray(model.class_names)[predict(model, dataset)]
        else:
            labels = detections['class'].to_numpy()
        detections['crop'] = [primary_crop(name) for name in labels]
        artifacts.write_text('detections.csv', detections.to_csv(index=False, lineterminator='\n'))

        rows = cover_crop_table(detections['crop'], detections['detection'], [values['pixel_area']] * len(detections))
        table = cover_crop_table_frame(rows)
        artifacts.write_text('cover_crop_table.csv', table.to_csv(index=False, lineterminator='\n'))
        self.stdout.write(format_cover_crop_table(rows))
