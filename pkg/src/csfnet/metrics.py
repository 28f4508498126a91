"""Binary classification metrics: threshold confusion metrics and AUC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant pairs + 0.5 * tied pairs) / (n_pos * n_neg).

    Returns ``nan`` when either class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return math.nan
    diff = pos[:, None] - neg[None, :]
    concordant = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (concordant + 0.5 * ties) / (pos.size * neg.size)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) points sweeping the threshold down through each distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y == 1)[distinct]
    fps = np.cumsum(y == 0)[distinct]
    n_pos, n_neg = int((labels == 1).sum()), int((labels == 0).sum())
    return np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]


def auc_trapezoid(scores, labels) -> float:
    """Area under the ROC curve by trapezoidal integration; ``nan`` for a single class."""
    labels = np.asarray(labels)
    if not ((labels == 1).any() and (labels == 0).any()):
        return math.nan
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class MetricsReport:
    acc: float
    prec: float
    rec: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    undefined: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Confusion metrics at ``threshold`` plus AUC.

    Precision, recall and F1 with a zero denominator are reported as 0 and
    listed in ``undefined``; AUC on a single-class set is ``None``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError(f"need equal-length non-empty score and label vectors, got {scores.shape}, {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    undefined = []
    acc = (tp + tn) / labels.size
    if tp + fp:
        prec = tp / (tp + fp)
    else:
        prec = 0.0
        undefined.append("prec")
    if tp + fn:
        rec = tp / (tp + fn)
    else:
        rec = 0.0
        undefined.append("rec")
    if "prec" in undefined or "rec" in undefined or prec + rec == 0:
        f1 = 0.0
        undefined.append("f1")
    else:
        f1 = 2 * prec * rec / (prec + rec)
    auc = compute_auc(scores, labels)
    if math.isnan(auc):
        auc = None
        undefined.append("auc")
    return MetricsReport(acc=acc, prec=prec, rec=rec, f1=f1, auc=auc, tp=tp, fp=fp, tn=tn, fn=fn,
                         scores=[float(s) for s in scores], labels=[int(v) for v in labels], undefined=undefined)


def format_table(rows: dict[str, MetricsReport]) -> str:
    """Aligned plain-text table with the Acc/Prec/F1/AUC/Rec columns."""
    width = max([len(k) for k in rows] + [6])
    lines = [f"{'Method':<{width}}  {'Acc':>6}  {'Prec':>6}  {'F1':>6}  {'AUC':>6}  {'Rec':>6}"]
    for name, r in rows.items():
        auc = f"{r.auc:.4f}" if r.auc is not None else "   n/a"
        lines.append(f"{name:<{width}}  {r.acc:.4f}  {r.prec:.4f}  {r.f1:.4f}  {auc:>6}  {r.rec:.4f}")
    return "\n".join(lines)
