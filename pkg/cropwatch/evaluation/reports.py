# evaluation/reports.py
"""
Method comparison across scenarios and the restricted-period ANN.

Every method is trained once on the training set with a seed derived from
the report seed and its name; DA additionally adapts to each test scenario
using that scenario's features only.
"""
import io
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import structlog

from adaptation.training import AdaptConfig, DomainPair, adapted_predict_proba, train_da
from classifier.ann import AnnConfig, ann_predict, ann_train
from classifier.dtw import knn_dtw_predict
from classifier.training import TrainConfig, predict_proba, train
from core.digests import digest_json
from core.exceptions import ValidationError
from core.rng import derive_seed
from pipeline.datasets import Dataset, slice_steps

from .metrics import classification_auc, f1

logger = structlog.get_logger("cropwatch.evaluation")

REPORT_COLUMNS = ['method', 'scenario', 'auc', 'f1', 'train_digest', 'test_digest', 'seed']
DEFAULT_METHODS = ('ann', 'knn_dtw', 'lstm', 'lstm_att', 'da')
CONFIG_KEYS = ('ann', 'lstm', 'adapt')


@dataclass(frozen=True)
class EvalRow:
    method: str
    scenario: str
    auc: float
    f1: float
    train_digest: str
    test_digest: str
    seed: int


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    seed: int = 0
    class_names: tuple = ()
    config_digest: str = ''

    @property
    def macro(self):
        return len(self.class_names) > 2

    @property
    def methods(self):
        return list(dict.fromkeys(row.method for row in self.rows))

    @property
    def scenarios(self):
        return list(dict.fromkeys(row.scenario for row in self.rows))

    def cell(self, method, scenario):
        for row in self.rows:
            if row.method == method and row.scenario == scenario:
                return row
        raise KeyError((method, scenario))

    def to_frame(self):
        return pd.DataFrame([asdict(row) for row in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self):
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format='%.6f', lineterminator='\n')
        return buffer.getvalue()


# -------------------------------------------------------------------
# METHODS
# -------------------------------------------------------------------

class Method:
    name = None

    def __init__(self, configs, seed):
        self.configs = configs
        self.seed = seed

    def fit(self, train_set: Dataset):
        raise NotImplementedError

    def predict_proba(self, test_set: Dataset):
        raise NotImplementedError


class AnnMethod(Method):
    name = 'ann'

    def fit(self, train_set):
        self.model = ann_train(train_set, self.configs['ann'], self.seed)

    def predict_proba(self, test_set):
        return ann_predict(self.model, test_set)


class KnnDtwMethod(Method):
    name = 'knn_dtw'

    def fit(self, train_set):
        self.train_set = train_set

    def predict_proba(self, test_set):
        _, scores = knn_dtw_predict(self.train_set, test_set)
        return scores


class LstmMethod(Method):
    name = 'lstm'
    pooling = 'last'

    def fit(self, train_set):
        config = TrainConfig(**{**self.configs['lstm'].to_dict(), 'pooling': self.pooling})
        self.model = train(train_set, config, self.seed)

    def predict_proba(self, test_set):
        return predict_proba(self.model, test_set)


class LstmAttMethod(LstmMethod):
    name = 'lstm_att'
    pooling = 'attention'


class DaMethod(LstmAttMethod):
    """LSTM^ATT on the source, then one adversarial adaptation per target scenario."""
    name = 'da'

    def fit(self, train_set):
        super().fit(train_set)
        self.train_set = train_set

    def predict_proba(self, test_set):
        adapted = train_da(
            DomainPair(self.train_set, test_set), self.model, self.configs['adapt'],
            seed=derive_seed(self.seed, 'adapt', test_set.digest),
        )
        return adapted_predict_proba(adapted, test_set)


METHODS = {cls.name: cls for cls in (AnnMethod, KnnDtwMethod, LstmMethod, LstmAttMethod, DaMethod)}


def resolve_configs(configs=None):
    configs = dict(configs or {})
    unknown = sorted(set(configs) - set(CONFIG_KEYS))
    if unknown:
        raise ValidationError(f"no method takes config section(s) {unknown}; expected {list(CONFIG_KEYS)}")
    resolved = {
        'ann': configs.get('ann') or AnnConfig(),
        'lstm': configs.get('lstm') or TrainConfig(),
        'adapt': configs.get('adapt') or AdaptConfig(),
    }
    expected = {'ann': AnnConfig, 'lstm': TrainConfig, 'adapt': AdaptConfig}
    for key, value in resolved.items():
        if not isinstance(value, expected[key]):
            raise ValidationError(f"config section '{key}' must be a {expected[key].__name__}")
        value.validate()
    return resolved


def score(probabilities, test_set: Dataset, positive_class=0):
    """(AUC, F1) with argmax decisions and ``positive_class`` as the F1 positive."""
    predictions = np.argmax(probabilities, axis=1)
    return (
        classification_auc(probabilities, test_set.labels, positive_class),
        f1(predictions, test_set.labels, positive_class),
    )


def compare_methods(
    train_set: Dataset, test_sets, methods=DEFAULT_METHODS, seed=0, configs=None, positive_class=0,
) -> EvalReport:
    """Train every method on ``train_set`` and score it on each named test set."""
    methods = list(methods)
    unknown = [name for name in methods if name not in METHODS]
    if unknown:
        raise ValidationError(f"unknown method(s) {unknown}; expected some of {sorted(METHODS)}")
    if not methods:
        raise ValidationError("no methods selected")
    test_sets = dict(test_sets)
    if not test_sets:
        raise ValidationError("no test scenarios given")
    for name, test_set in test_sets.items():
        if tuple(test_set.shape) != tuple(train_set.shape) or test_set.class_names != train_set.class_names:
            raise ValidationError(
                f"scenario '{name}' layout {list(test_set.shape)} / {list(test_set.class_names)} does not match "
                f"training layout {list(train_set.shape)} / {list(train_set.class_names)}"
            )
    if not 0 <= positive_class < len(train_set.class_names):
        raise ValidationError(f"positive_class {positive_class} outside the {len(train_set.class_names)} classes")
    configs = resolve_configs(configs)
    report = EvalReport(
        seed=seed, class_names=train_set.class_names,
        config_digest=digest_json({key: value.to_dict() for key, value in configs.items()}),
    )
    for name in methods:
        method_seed = derive_seed(seed, 'method', name)
        method = METHODS[name](configs, method_seed)
        logger.info("Training method", method=name, pixels=len(train_set))
        method.fit(train_set)
        for scenario, test_set in test_sets.items():
            auc_value, f1_value = score(method.predict_proba(test_set), test_set, positive_class)
            report.rows.append(EvalRow(
                name, scenario, auc_value, f1_value, train_set.digest, test_set.digest, method_seed,
            ))
            logger.info("Scored", method=name, scenario=scenario, auc=round(auc_value, 4), f1=round(f1_value, 4))
    return report


def format_report(report: EvalReport):
    """Methods as rows, an (AUC, F1) column pair per scenario."""
    if not report.rows:
        return "(empty report)"
    frame = report.to_frame()
    grid = frame.pivot(index='method', columns='scenario', values=['auc', 'f1'])
    grid = grid.reindex(index=report.methods)
    columns = [(metric, scenario) for scenario in report.scenarios for metric in ('auc', 'f1')]
    grid = grid[columns]
    grid.columns = pd.MultiIndex.from_tuples([(scenario, metric.upper()) for metric, scenario in columns])
    grid.index.name = None
    text = grid.to_string(float_format=lambda value: f"{value:.3f}")
    if report.macro:
        text += "\nAUC is the one-vs-rest macro average over classes (multi-class extension)."
    return text


# -------------------------------------------------------------------
# RESTRICTED-PERIOD ANN
# -------------------------------------------------------------------

@dataclass(frozen=True)
class RestrictedPeriodResult:
    interval: tuple
    auc: float
    f1: float
    full_auc: float
    full_f1: float

    @property
    def beats_full_sequence(self):
        return self.auc >= self.full_auc


def restricted_period_probe(
    train_set: Dataset, test_set: Dataset, interval, config: AnnConfig = None, seed=0, positive_class=0,
):
    """
    ANN trained and tested on ``interval`` steps only, next to the same ANN
    on the full sequence. A restricted model that holds up supports the
    claim that the interval carries the discriminative signal.
    """
    config = config or AnnConfig()
    if not 0 <= positive_class < len(train_set.class_names):
        raise ValidationError(f"positive_class {positive_class} outside the {len(train_set.class_names)} classes")
    restricted_train = slice_steps(train_set, interval)
    restricted_test = slice_steps(test_set, interval)
    restricted_model = ann_train(restricted_train, config, seed)
    auc_value, f1_value = score(ann_predict(restricted_model, restricted_test), test_set, positive_class)
    full_auc, full_f1 = score(ann_predict(ann_train(train_set, config, seed), test_set), test_set, positive_class)
    logger.info(
        "Restricted-period ANN",
        interval=list(interval), auc=round(auc_value, 4), full_auc=round(full_auc, 4),
    )
    return RestrictedPeriodResult(tuple(int(v) for v in interval), auc_value, f1_value, full_auc, full_f1)
