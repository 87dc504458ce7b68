"""Classification metrics, fold-weighted accuracy, abstention rate, CV splits, ROC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import STATIC, decide
from .errors import ValidationError

# Weighted accuracy is undefined when every image in every fold was abstained.
NO_COVERAGE = None


@dataclass
class ClassificationReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    per_class_accuracy: np.ndarray
    overall_accuracy: float
    zero_division: dict = field(default_factory=dict)

    @property
    def macro(self):
        return {
            "precision": float(self.precision.mean()),
            "recall": float(self.recall.mean()),
            "f1": float(self.f1.mean()),
            "accuracy": self.overall_accuracy,
        }


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def confusion_and_prf1(true, pred, num_classes) -> ClassificationReport:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.size == 0:
        raise ValidationError("no labels to score")
    if true.shape != pred.shape:
        raise ValidationError("true and predicted label lists differ in length")
    if true.min() < 0 or pred.min() < 0 or true.max() >= num_classes or pred.max() >= num_classes:
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    total = cm.sum()
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    precision, recall, f1 = (np.zeros(num_classes) for _ in range(3))
    flags = {}
    for c in range(num_classes):
        precision[c], zp = _ratio(tp[c], tp[c] + fp[c])
        recall[c], zr = _ratio(tp[c], tp[c] + fn[c])
        f1[c], zf = _ratio(2 * precision[c] * recall[c], precision[c] + recall[c])
        bad = [name for name, z in (("precision", zp), ("recall", zr), ("f1", zf)) if z]
        if bad:
            flags[c] = bad
    per_class_acc = (tp + tn) / total
    return ClassificationReport(cm, precision, recall, f1, per_class_acc, float(tp.sum() / total), flags)


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    weight: int
    excluded_ids: list
    fold_size: int

    @property
    def excluded(self):
        return len(self.excluded_ids)


def fold_result(fold, decisions) -> FoldResult:
    included = [d for d in decisions if not d.abstained]
    excluded = [d.image_id for d in decisions if d.abstained]
    acc = float(np.mean([d.label == d.true_label for d in included])) if included else 0.0
    return FoldResult(fold, acc, len(included), excluded, len(decisions))


def wa_acc(folds):
    """Fold accuracies weighted by included-image counts; NO_COVERAGE if nothing was included."""
    total = sum(f.weight for f in folds)
    if total == 0:
        return NO_COVERAGE
    return sum(f.accuracy * f.weight for f in folds) / total


def abstain_pct(folds, d_all):
    if d_all <= 0:
        raise ValidationError("dataset size must be positive")
    excluded = sum(f.excluded for f in folds)
    if excluded > d_all:
        raise ValidationError("more excluded images than images in the dataset")
    return 100.0 * excluded / d_all


def stratified_kfold(labels, k, seed):
    """k (train, test) index pairs; each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValidationError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ValidationError(f"class {c} has {len(idx)} members, fewer than k={k}")
        idx = rng.permutation(idx)
        fold_of[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    all_idx = np.arange(len(labels))
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def roc_curve(scores, positives):
    """ROC points (fpr, tpr, thresholds) sweeping thresholds from high to low."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positives[order]
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    cut = np.r_[distinct, len(s) - 1]
    tps = np.cumsum(y)[cut]
    fps = np.cumsum(~y)[cut]
    n_pos, n_neg = y.sum(), (~y).sum()
    tpr = np.r_[0.0, tps / n_pos] if n_pos else np.full(len(cut) + 1, np.nan)
    fpr = np.r_[0.0, fps / n_neg] if n_neg else np.full(len(cut) + 1, np.nan)
    return fpr, tpr, np.r_[np.inf, s[cut]]


def auc_trapezoid(fpr, tpr):
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


@dataclass
class RocResult:
    curves: dict
    auc: dict
    undefined: list

    @property
    def macro_auc(self):
        vals = [v for v in self.auc.values() if v is not None]
        return float(np.mean(vals)) if vals else None


def roc_auc(distributions, true, num_classes) -> RocResult:
    """One-vs-rest ROC per class from aggregated distributions; AUC by the trapezoid rule."""
    dist = np.asarray(distributions, dtype=np.float64)
    true = np.asarray(true)
    curves, aucs, undefined = {}, {}, []
    for c in range(num_classes):
        pos = true == c
        if pos.all() or not pos.any():
            aucs[c] = None
            undefined.append(c)
            continue
        fpr, tpr, thr = roc_curve(dist[:, c], pos)
        curves[c] = (fpr, tpr, thr)
        aucs[c] = auc_trapezoid(fpr, tpr)
    return RocResult(curves, aucs, undefined)


@dataclass
class SweepRow:
    delta: float
    wa_acc_included: float | None
    abs_pct: float
    excluded: int
    wa_acc_excluded_static: float | None

    @property
    def excluded_plot_value(self):
        return 0.0 if self.wa_acc_excluded_static is NO_COVERAGE else self.wa_acc_excluded_static


def delta_sweep(fold_summaries, fold_labels, fold_ids, deltas, d_all=None):
    """Sweep table over ``deltas`` from PassSummaries computed once per (image, model).

    ``fold_summaries[i][j]`` is the summary list of image j in fold i. Accuracy
    over excluded images uses the static ensemble decision.
    """
    deltas = list(deltas)
    if any(b < a for a, b in zip(deltas, deltas[1:])):
        raise ValidationError("delta grid must be ascending")
    if d_all is None:
        d_all = sum(len(f) for f in fold_summaries)
    static = [
        [decide(s, STATIC, i, y) for s, i, y in zip(sums, ids, labels)]
        for sums, ids, labels in zip(fold_summaries, fold_ids, fold_labels)
    ]
    rows = []
    for delta in deltas:
        folds, excl_folds = [], []
        for f, (sums, ids, labels) in enumerate(zip(fold_summaries, fold_ids, fold_labels)):
            decisions = [decide(s, delta, i, y) for s, i, y in zip(sums, ids, labels)]
            folds.append(fold_result(f, decisions))
            hard = [st for st, d in zip(static[f], decisions) if d.abstained]
            acc = float(np.mean([d.label == d.true_label for d in hard])) if hard else 0.0
            excl_folds.append(FoldResult(f, acc, len(hard), [], len(hard)))
        rows.append(
            SweepRow(delta, wa_acc(folds), abstain_pct(folds, d_all), sum(f.excluded for f in folds), wa_acc(excl_folds))
        )
    return rows
