"""
Train the LSTM classifier (attention or last-hidden pooling) on a dataset CSV.
"""
import pandas as pd
from classifier.bundle import POOLINGS
from classifier.serializers import TrainRunSerializer
from classifier.training import TrainConfig, discriminative_period, train
from core.management.base import RunCommand
from core.serializers import build_config
from phenology.profiles import format_interval_dates
from pipeline.serializers import load_with_layout


def periods_frame(intervals, values, period):
    rows = [
        {
            'first_step': interval.first,
            'last_step': interval.last,
            'mass': round(interval.mass, 6),
            'dates': format_interval_dates(
                (interval.first, interval.last), values['window_composites'], values['stride_composites'], period,
            ),
        }
        for interval in intervals
    ]
    return pd.DataFrame(rows, columns=['first_step', 'last_step', 'mass', 'dates'])


class Command(RunCommand):
    help = "Train a classifier; writes model.json and the discriminative periods."
    name = 'train'
    serializer_class = TrainRunSerializer
    flags = {'data': 'data', 'epochs': 'epochs', 'hidden_dim': 'hidden_dim', 'pooling': 'pooling'}

    def add_run_arguments(self, parser):
        parser.add_argument('--data', help="Training dataset CSV.")
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--hidden-dim', type=int)
        parser.add_argument('--pooling', choices=POOLINGS)

    def run(self, values, artifacts):
        dataset = load_with_layout(values['data'], values)
        artifacts.add_input('data', values['data'])
        model = train(dataset, build_config(TrainConfig, values), artifacts.seed)
        artifacts.write_json('model.json', model.to_dict())

        period = dataset.pixels[0].raw.composite_period_days
        frame = periods_frame(discriminative_period(model, dataset), values, period)
        artifacts.write_text('periods.csv', frame.to_csv(index=False, lineterminator='\n'))

        self.stdout.write(f"model {model.digest} trained on {dataset.digest} ({len(dataset)} pixels)")
        if len(frame):
            self.stdout.write(frame.to_string(index=False))
