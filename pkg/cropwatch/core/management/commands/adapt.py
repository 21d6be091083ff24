"""
Adapt a trained classifier to a shifted target season.
"""
import numpy as np
import pandas as pd
from adaptation.serializers import AdaptRunSerializer
from adaptation.training import AdaptConfig, DomainPair, adapted_attention_profiles, adapted_predict_proba, train_da
from classifier.bundle import ModelBundle
from classifier.training import attention_profiles, estimate_period_shift, predict_proba
from core.exceptions import DigestMismatchError
from core.management.base import RunCommand
from core.serializers import build_config
from evaluation.metrics import classification_auc
from pipeline.serializers import load_with_layout


def attention_frame(model, adapted, source, target):
    """Mean attention per step: source, target before and after mapping."""
    columns = {
        'source': attention_profiles(model, source).mean(axis=0),
        'target': attention_profiles(model, target).mean(axis=0),
        'target_adapted': adapted_attention_profiles(adapted, target).mean(axis=0),
    }
    return pd.DataFrame({'step': np.arange(1, target.shape[0] + 1), **columns})


def attention_lags(frame, max_shift=8):
    """Steps by which the target attention trails the source, before and after mapping."""
    return {
        column: estimate_period_shift(
            frame['source'].to_numpy(), frame[column].to_numpy(), min(max_shift, len(frame) - 1),
        )
        for column in ('target', 'target_adapted')
    }


class Command(RunCommand):
    help = "Adversarially map a target season onto a frozen source model; writes adapted.json."
    name = 'adapt'
    serializer_class = AdaptRunSerializer
    flags = {
        'model': 'model', 'source': 'source', 'target': 'target', 'epochs': 'epochs', 'lambda_att': 'lambda_att',
    }

    def add_run_arguments(self, parser):
        parser.add_argument('--model', help="model.json written by train.")
        parser.add_argument('--source', help="Dataset CSV the model was trained on.")
        parser.add_argument('--target', help="Target-season dataset CSV (labels unused for training).")
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--lambda-att', type=float)

    def run(self, values, artifacts):
        model = ModelBundle.load(values['model'])
        artifacts.add_input('model', values['model'])
        source = load_with_layout(values['source'], values, model.class_names)
        target = load_with_layout(values['target'], values, model.class_names)
        artifacts.add_input('source', values['source'])
        artifacts.add_input('target', values['target'])
        if model.train_digest and model.train_digest != source.digest:
            raise DigestMismatchError(
                f"model was trained on dataset {model.train_digest}, but --source is {source.digest}"
            )

        adapted = train_da(DomainPair(source, target), model, build_config(AdaptConfig, values), artifacts.seed)
        artifacts.write_json('adapted.json', adapted.to_dict())
        frame = attention_frame(model, adapted, source, target)
        artifacts.write_text('attention.csv', frame.to_csv(index=False, float_format='%.6f', lineterminator='\n'))

        self.stdout.write(f"adapted {adapted.digest} (model {model.digest}, target {target.digest})")
        lags = attention_lags(frame)
        self.stdout.write(f"attention lag {lags['target']:+d} -> {lags['target_adapted']:+d} steps")
        if len(set(target.labels.tolist())) > 1:
            before = classification_auc(predict_proba(model, target), target.labels)
            after = classification_auc(adapted_predict_proba(adapted, target), target.labels)
            self.stdout.write(f"target AUC {before:.3f} -> {after:.3f}")
