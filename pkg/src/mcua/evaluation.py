"""Turn per-fold pass summaries into decisions, metric tables and CSV files."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .ensemble import ABSTAIN, STATIC
from .errors import DataIOError
from .metrics import (
    NO_COVERAGE,
    abstain_pct,
    confusion_and_prf1,
    delta_sweep,
    fold_result,
    roc_auc,
    wa_acc,
)


def fmt(x):
    """Stable text form for CSV cells: 'NA' for missing, 'inf' for the static sentinel."""
    if x is None:
        return "NA"
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return format(float(x), ".10g")
    return str(x)


def _write(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for r in rows:
                out.writerow([fmt(v) for v in r])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def fold_decisions(folds, delta):
    return [f.decisions(delta) for f in folds]


def evaluate(folds, delta, num_classes):
    """Metrics for one δ (``STATIC`` for the static ensemble) over all folds.

    Returns a dict with the per-fold results, WA_ACC, Abs %, the pooled
    classification report over included images and the ROC result.
    """
    decisions = fold_decisions(folds, delta)
    results = [fold_result(f.fold, d) for f, d in zip(folds, decisions)]
    d_all = sum(len(d) for d in decisions)
    kept = [x for d in decisions for x in d if not x.abstained]
    report = roc = None
    if kept:
        report = confusion_and_prf1([x.true_label for x in kept], [x.label for x in kept], num_classes)
        roc = roc_auc([x.distribution for x in kept], [x.true_label for x in kept], num_classes)
    return {
        "delta": delta,
        "decisions": decisions,
        "folds": results,
        "wa_acc": wa_acc(results),
        "abs_pct": abstain_pct(results, d_all),
        "report": report,
        "roc": roc,
    }


def baseline_report(folds, num_classes):
    true = np.concatenate([f.labels for f in folds])
    pred = np.concatenate([f.baseline for f in folds])
    return confusion_and_prf1(true, pred, num_classes)


def sweep(folds, deltas):
    return delta_sweep(
        [f.summaries for f in folds], [f.labels for f in folds], [f.ids for f in folds], deltas
    )


# -- CSV writers ---------------------------------------------------------------


def write_decisions(path, folds, decisions):
    model_ids = [s.model_id for s in folds[0].summaries[0]] if folds and folds[0].summaries else []
    header = ["fold", "image_id", "true_label"] + [f"sigma:{m}" for m in model_ids]
    header += ["delta", "selected", "predicted"]
    rows = []
    for f, ds in zip(folds, decisions):
        for d in ds:
            sig = [s.scalar_uncertainty for s in d.summaries]
            pred = "ABSTAIN" if d.label == ABSTAIN else d.label
            rows.append([f.fold, d.image_id, d.true_label, *sig, d.delta, len(d.selected), pred])
    _write(path, header, rows)


def write_metrics(path, result, baseline=None, num_classes=4):
    """Per-fold accuracy rows, then per-class and macro rows for the ensemble and the baseline."""
    header = ["mode", "delta", "scope", "class", "precision", "recall", "f1", "accuracy", "weight", "excluded", "auc"]
    mode = "static" if result["delta"] == STATIC else "dynamic"
    delta = result["delta"]
    rows = [[mode, delta, f"fold{r.fold}", "all", None, None, None, r.accuracy if r.weight else None, r.weight, r.excluded, None]
            for r in result["folds"]]
    rows.append([mode, delta, "wa_acc", "all", None, None, None, result["wa_acc"],
                 sum(r.weight for r in result["folds"]), sum(r.excluded for r in result["folds"]), None])
    rows.append([mode, delta, "abs_pct", "all", None, None, None, result["abs_pct"], None, None, None])
    for name, rep, roc in ((mode, result["report"], result["roc"]), ("patch-majority", baseline, None)):
        if rep is None:
            continue
        d = delta if name == mode else None
        for c in range(num_classes):
            auc = roc.auc.get(c) if roc else None
            rows.append([name, d, "pooled", c, rep.precision[c], rep.recall[c], rep.f1[c], rep.per_class_accuracy[c], None, None, auc])
        m = rep.macro
        rows.append([name, d, "pooled", "macro", m["precision"], m["recall"], m["f1"], m["accuracy"], None, None,
                     roc.macro_auc if roc else None])
    _write(path, header, rows)


def write_sweep(path, rows):
    header = ["delta", "wa_acc_included", "abs_pct", "excluded", "wa_acc_excluded_static", "wa_acc_excluded_plot"]
    _write(path, header, [[r.delta, r.wa_acc_included, r.abs_pct, r.excluded, r.wa_acc_excluded_static, r.excluded_plot_value]
                          for r in rows])


def write_roc(path, roc):
    rows = []
    if roc is not None:
        for c in sorted(roc.curves):
            fpr, tpr, thr = roc.curves[c]
            rows.extend([c, i, a, b, t] for i, (a, b, t) in enumerate(zip(fpr, tpr, thr)))
    _write(path, ["class", "point", "fpr", "tpr", "threshold"], rows)


def read_csv(path):
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


# -- console summary -------------------------------------------------------------


def summary_table(result, class_names, baseline=None):
    """Per-class precision/recall/F1/accuracy with a macro 'Total' row."""
    lines = []
    rep = result["report"]
    label = "static ensemble" if result["delta"] == STATIC else f"dynamic ensemble, delta={fmt(result['delta'])}"
    lines.append(label)
    if rep is None:
        lines.append("  every image abstained; no coverage")
    else:
        lines.append(f"  {'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}{'accuracy':>10}")
        for c, name in enumerate(class_names):
            lines.append(
                f"  {name:<12}{rep.precision[c]:>10.4f}{rep.recall[c]:>10.4f}{rep.f1[c]:>10.4f}{rep.per_class_accuracy[c]:>10.4f}"
            )
        m = rep.macro
        lines.append(f"  {'Total':<12}{m['precision']:>10.4f}{m['recall']:>10.4f}{m['f1']:>10.4f}{m['accuracy']:>10.4f}")
    wa = result["wa_acc"]
    lines.append(f"  WA_ACC {'no coverage' if wa is NO_COVERAGE else f'{wa:.4f}'}  Abs {result['abs_pct']:.2f}%")
    if result["roc"] is not None and result["roc"].macro_auc is not None:
        lines.append(f"  macro AUC {result['roc'].macro_auc:.4f}")
    if baseline is not None:
        lines.append(f"  patch-majority baseline accuracy {baseline.overall_accuracy:.4f}")
    return "\n".join(lines)


def save_all(out_dir, folds, result, num_classes, sweep_rows=None, baseline=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_decisions(out_dir / "decisions.csv", folds, result["decisions"])
    write_metrics(out_dir / "metrics.csv", result, baseline, num_classes)
    write_roc(out_dir / "roc.csv", result["roc"])
    if sweep_rows is not None:
        write_sweep(out_dir / "sweep.csv", sweep_rows)
