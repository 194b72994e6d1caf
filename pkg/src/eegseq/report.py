"""Run reports and the CSV/JSON files written for each run and session."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .metrics import METRIC_NAMES, Aggregate, aggregate, format_percent
from .models import DISPLAY_NAMES
from .training import Evaluation, History

CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


@dataclass
class SeedRun:
    seed: int
    evaluation: Evaluation
    history: History

    def to_dict(self) -> dict:
        ev = self.evaluation
        return {
            "seed": self.seed,
            "metrics": ev.metrics.as_dict(),
            "undefined_metrics": list(ev.metrics.undefined),
            "confusion": ev.confusion.to_dict(),
            "roc": [[fpr, tpr, None if math.isinf(thr) else thr] for fpr, tpr, thr in ev.roc],
            "curves": self.history.to_dict(),
        }


@dataclass
class RunReport:
    family: str
    task: str
    runs: list[SeedRun]

    @property
    def aggregate(self) -> Aggregate:
        return aggregate([r.evaluation.metrics for r in self.runs])

    def to_dict(self) -> dict:
        agg = self.aggregate
        return {
            "family": self.family,
            "task": self.task,
            "seeds": [r.seed for r in self.runs],
            "aggregate": {
                "n": agg.n,
                "std_undefined": agg.std_undefined,
                "mean": agg.mean,
                "std": agg.std,
                "percent": {m: format_percent(agg.mean[m], agg.std[m]) for m in agg.mean},
            },
            "runs": [r.to_dict() for r in self.runs],
        }


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_curves_csv(history: History, path) -> None:
    _write_rows(path, CURVE_COLUMNS, history.rows())


def write_confusion_csv(ev: Evaluation, path) -> None:
    cm = ev.confusion
    _write_rows(path, ("", "pred_negative", "pred_positive"), [("true_negative", cm.tn, cm.fp), ("true_positive", cm.fn, cm.tp)])


def write_roc_csv(ev: Evaluation, path) -> None:
    _write_rows(path, ("fpr", "tpr", "threshold"), ev.roc)


def write_scores_csv(ev: Evaluation, path) -> None:
    _write_rows(path, ("score", "label"), zip((float(s) for s in ev.scores), (int(y) for y in ev.labels)))


def write_metrics_json(ev: Evaluation, path) -> None:
    dump_json(
        {
            "metrics": ev.metrics.as_dict(),
            "undefined_metrics": list(ev.metrics.undefined),
            "confusion": ev.confusion.to_dict(),
        },
        path,
    )


def write_evaluation(ev: Evaluation, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_json(ev, out / "metrics.json")
    write_confusion_csv(ev, out / "confusion.csv")
    write_roc_csv(ev, out / "roc.csv")
    write_scores_csv(ev, out / "scores.csv")


def write_aggregate(reports: list[RunReport], csv_path, txt_path=None) -> None:
    """One row per family with mean and sample std of each metric (fraction scale)."""
    header = ["model", "n_seeds"]
    for m in METRIC_NAMES:
        header += [f"{m}_mean", f"{m}_std"]
    rows = []
    for rep in reports:
        agg = rep.aggregate
        row = [DISPLAY_NAMES.get(rep.family, rep.family), agg.n]
        for m in METRIC_NAMES:
            row += [agg.mean.get(m), agg.std.get(m)]
        rows.append(row)
    _write_rows(csv_path, header, rows)
    if txt_path is None:
        return
    titles = ("Precision", "Accuracy", "F1", "Recall", "Specificity", "AUC")
    lines = ["\t".join(("Model",) + titles)]
    for rep in reports:
        agg = rep.aggregate
        cells = [format_percent(agg.mean[m], agg.std[m]) if m in agg.mean else "-" for m in METRIC_NAMES]
        lines.append("\t".join([DISPLAY_NAMES.get(rep.family, rep.family)] + cells))
    Path(txt_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
