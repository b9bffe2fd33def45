"""One-vs-all classification metrics and Table-style reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError
from .schema import DEFAULT_SCHEMA, CategorySchema

METRICS = ("auc", "sens", "spec", "prec")


def roc_auc_ova(scores, labels) -> float:
    """Mann-Whitney pair statistic: P(pos > neg) + 0.5 P(tie) over all pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative example")
    wins = ties = 0
    # chunked to bound the pairwise matrix size
    for i in range(0, pos.size, 1024):
        p = pos[i:i + 1024, None]
        wins += int(np.count_nonzero(p > neg))
        ties += int(np.count_nonzero(p == neg))
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ROC points (fpr, tpr), one step per distinct threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0, tp] / max(1, y.sum())
    fpr = np.r_[0, fp] / max(1, (~y).sum())
    return fpr, tpr


def trapezoid_auc(scores, labels) -> float:
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def confusion_metrics(pred, labels, c: int) -> tuple[float | None, float | None, float | None]:
    """One-vs-rest sensitivity, specificity and precision for class ``c``.

    A metric with a zero denominator is ``None`` (not available), which is
    different from a measured 0.
    """
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    pp, ap = pred == c, labels == c
    tp = int(np.sum(pp & ap))
    fp = int(np.sum(pp & ~ap))
    fn = int(np.sum(~pp & ap))
    tn = int(np.sum(~pp & ~ap))

    def ratio(a, b):
        return a / (a + b) if a + b else None

    return ratio(tp, fn), ratio(tn, fp), ratio(tp, fp)


@dataclass(frozen=True)
class ClassRow:
    category: str
    cls: str
    auc: float | None
    sens: float | None
    spec: float | None
    prec: float | None
    n_pos: int
    n_neg: int


@dataclass
class MetricsReport:
    rows: list[ClassRow] = field(default_factory=list)

    def _values(self, metric: str, category: str | None = None) -> list[float | None]:
        return [getattr(r, metric) for r in self.rows if category in (None, r.category)]

    def average(self, metric: str, category: str | None = None) -> float | None:
        vals = [v for v in self._values(metric, category) if v is not None]
        return float(np.mean(vals)) if vals else None

    def skipped(self, metric: str, category: str | None = None) -> int:
        return sum(v is None for v in self._values(metric, category))

    @property
    def categories(self) -> list[str]:
        return list(dict.fromkeys(r.category for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "class", *METRICS, "n_pos", "n_neg"])

        def fmt(v):
            return "NA" if v is None else f"{v:.6f}"

        for r in self.rows:
            w.writerow([r.category, r.cls, *(fmt(getattr(r, m)) for m in METRICS), r.n_pos, r.n_neg])
        for cat in self.categories:
            w.writerow([cat, "avg", *(fmt(self.average(m, cat)) for m in METRICS), "", ""])
        w.writerow(["ALL", "avg", *(fmt(self.average(m)) for m in METRICS), "", ""])
        return buf.getvalue()

    def to_table(self) -> str:
        def pct(v):
            return "   N/A" if v is None else f"{100 * v:6.1f}"

        lines = [f"{'category':<8} {'class':<6} {'AUC':>6} {'Sens':>6} {'Spec':>6} {'Prec':>6} {'n_pos':>6}"]
        for r in self.rows:
            lines.append(f"{r.category:<8} {r.cls:<6} " + " ".join(pct(getattr(r, m)) for m in METRICS)
                         + f" {r.n_pos:>6}")
        lines.append(f"{'average':<15} " + " ".join(pct(self.average(m)) for m in METRICS))
        skipped = {m: self.skipped(m) for m in METRICS if self.skipped(m)}
        if skipped:
            lines.append("N/A cells skipped in averages: "
                         + ", ".join(f"{m}={n}" for m, n in skipped.items()))
        return "\n".join(lines) + "\n"


def evaluate(probs, labels, schema: CategorySchema = DEFAULT_SCHEMA) -> MetricsReport:
    """Build a report from per-category probabilities (n, k_j) and labels (n, 8)."""
    labels = np.asarray(labels)
    rows = []
    for j, cat in enumerate(schema.categories):
        p = np.asarray(probs[j])
        y = labels[:, j] if labels.size else np.zeros(0, dtype=int)
        pred = p.argmax(axis=1) if p.size else np.zeros(0, dtype=int)
        for c, name in enumerate(cat.classes):
            is_c = y == c
            try:
                auc = roc_auc_ova(p[:, c], is_c)
            except UndefinedMetricError:
                auc = None
            sens, spec, prec = confusion_metrics(pred, y, c)
            rows.append(ClassRow(cat.name, name, auc, sens, spec, prec,
                                 int(is_c.sum()), int((~is_c).sum())))
    return MetricsReport(rows)


def report(model, examples, schema: CategorySchema | None = None, transform=None) -> MetricsReport:
    """Evaluate ``model`` once on ``examples`` without augmentation."""
    from .model import predict

    schema = schema or model.schema
    transform = transform or model.pipeline
    probs = predict(model, examples, transform=transform)
    labels = np.array([e.labels for e in examples]).reshape(len(examples), len(schema))
    return evaluate(probs, labels, schema)


def accuracy(probs, labels) -> list[float]:
    labels = np.asarray(labels)
    return [float(np.mean(np.asarray(p).argmax(axis=1) == labels[:, j])) for j, p in enumerate(probs)]
