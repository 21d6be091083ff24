"""
Compare methods across test scenarios (Table-style grid on stdout).
"""
from core.exceptions import ValidationError
from core.management.base import RunCommand
from evaluation.reports import compare_methods, format_report
from evaluation.serializers import EvaluateRunSerializer, evaluate_config_from_data, evaluation_section
from pipeline.serializers import load_with_layout


def parse_tests(items):
    tests = {}
    for item in items:
        name, sep, path = item.partition('=')
        if not sep or not name or not path:
            raise ValidationError(f"--test expects name=path, got '{item}'")
        if name in tests:
            raise ValidationError(f"--test scenario '{name}' given twice")
        tests[name] = path
    return tests


def parse_methods(text):
    return [name.strip() for name in text.split(',') if name.strip()]


class Command(RunCommand):
    help = "Train every method on --train and score AUC/F1 on each --test scenario; writes report.csv."
    name = 'evaluate'
    serializer_class = EvaluateRunSerializer

    def add_run_arguments(self, parser):
        parser.add_argument('--train', help="Training dataset CSV.")
        parser.add_argument('--test', action='append', default=[], metavar='NAME=PATH', help="Repeatable.")
        parser.add_argument('--methods', help="Comma-separated, e.g. ann,lstm_att,da.")

    def overrides(self, options):
        data = {}
        if options.get('train'):
            data['train'] = options['train']
        if options.get('test'):
            data['tests'] = parse_tests(options['test'])
        if options.get('methods'):
            data['methods'] = parse_methods(options['methods'])
        return data

    def run(self, values, artifacts):
        train_set = load_with_layout(values['train'], values)
        artifacts.add_input('train', values['train'])
        test_sets = {}
        for name, path in values['tests'].items():
            test_sets[name] = load_with_layout(path, values, train_set.class_names)
            artifacts.add_input(f"test:{name}", path)

        methods, positive_class, configs = evaluate_config_from_data(evaluation_section(values), self.name)
        report = compare_methods(train_set, test_sets, methods, artifacts.seed, configs, positive_class)
        artifacts.write_text('report.csv', report.to_csv())
        self.stdout.write(format_report(report))
