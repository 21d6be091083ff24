"""
Confidence progression and earliest detection for a trained classifier.
"""
from classifier.bundle import ModelBundle
from core.management.base import RunCommand
from pipeline.serializers import load_with_layout
from temporal.charts import render_confidence_svg
from temporal.confidence import cohort_confidence, confidence_frame, detection_summary, pixel_detections
from temporal.serializers import EarlyRunSerializer


class Command(RunCommand):
    help = "Per-class confidence curves (CSV + SVG) and per-pixel earliest detection steps."
    name = 'early'
    serializer_class = EarlyRunSerializer
    flags = {'model': 'model', 'data': 'data', 'threshold': 'threshold', 'patience': 'patience'}

    def add_run_arguments(self, parser):
        parser.add_argument('--model', help="model.json written by train.")
        parser.add_argument('--data', help="Dataset CSV to track.")
        parser.add_argument('--threshold', type=float)
        parser.add_argument('--patience', type=int)

    def run(self, values, artifacts):
        model = ModelBundle.load(values['model'])
        artifacts.add_input('model', values['model'])
        dataset = load_with_layout(values['data'], values, model.class_names)
        artifacts.add_input('data', values['data'])

        present = [name for label, name in enumerate(model.class_names) if (dataset.labels == label).any()]
        cohorts = [cohort_confidence(model, dataset, name) for name in present]
        frame = confidence_frame(cohorts)
        artifacts.write_text('confidence.csv', frame.to_csv(index=False, float_format='%.6f', lineterminator='\n'))
        artifacts.write_text('confidence.svg', render_confidence_svg(cohorts))

        threshold, patience = values['threshold'], values['patience']
        detections = pixel_detections(model, dataset, threshold, patience)
        artifacts.write_text('detections.csv', detections.to_csv(index=False, lineterminator='\n'))
        summary = detection_summary(model, dataset, threshold, patience)
        self.stdout.write(summary.to_string(index=False))
