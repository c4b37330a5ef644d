"""Agreement metrics between gold labels and predictions.

Confusion matrices are oriented gold-on-rows, predictions-on-columns
throughout. Provides accuracy, Cohen's kappa, per-class precision / recall /
F1 with macro averaging, and Spearman's rho for ordinal outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

ERROR_LABEL = "ERROR"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count grid; rows index gold labels, columns predictions."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise DataError(f"confusion matrix must be {k}x{k}, got {counts.shape}")
        if (counts < 0).any():
            raise DataError("confusion matrix entries must be non-negative")
        if counts.sum() == 0:
            raise DataError("confusion matrix is empty")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def without_label(self, label: str) -> "ConfusionMatrix":
        """Drop one row/column pair (e.g. the synthetic error column)."""
        if label not in self.labels:
            return self
        i = self.labels.index(label)
        keep = [j for j in range(len(self.labels)) if j != i]
        return ConfusionMatrix(
            tuple(l for l in self.labels if l != label),
            self.counts[np.ix_(keep, keep)],
        )

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gold\\pred"] + list(self.labels))
            for label, row in zip(self.labels, self.counts):
                w.writerow([label] + [int(c) for c in row])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ConfusionMatrix":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        labels = tuple(rows[0][1:])
        counts = np.array([[int(c) for c in r[1:]] for r in rows[1:]], dtype=np.int64)
        return cls(labels, counts)


def build_confusion(
    gold: Union[Mapping[str, str], Sequence[str]],
    predicted: Union[Mapping[str, str], Sequence[str]],
    labels: Sequence[str],
) -> ConfusionMatrix:
    """Count gold-vs-predicted pairs.

    Accepts two mappings keyed by unit id (id sets must match) or two
    positionally aligned sequences of equal length.
    """
    if isinstance(gold, Mapping) != isinstance(predicted, Mapping):
        raise DataError("gold and predicted must both be mappings or both sequences")
    if isinstance(gold, Mapping):
        if set(gold) != set(predicted):
            missing = set(gold) ^ set(predicted)
            raise DataError(f"gold/predicted id sets differ, e.g. {sorted(missing)[:5]}")
        keys = sorted(gold)
        pairs = [(gold[k], predicted[k], k) for k in keys]
    else:
        if len(gold) != len(predicted):
            raise DataError("gold and predicted must have equal length")
        pairs = [(g, p, str(i)) for i, (g, p) in enumerate(zip(gold, predicted))]

    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p, uid in pairs:
        if g not in index:
            raise DataError(f"unit {uid!r}: gold label {g!r} not in label list")
        if p not in index:
            raise DataError(f"unit {uid!r}: predicted label {p!r} not in label list")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(tuple(labels), counts)


def cohens_kappa(cm: ConfusionMatrix) -> float:
    """Chance-adjusted agreement (p_o - p_e) / (1 - p_e).

    When expected agreement is 1 (all mass in one cell) observed agreement
    is 1 too; return 1 rather than 0/0.
    """
    counts = cm.counts.astype(float)
    total = counts.sum()
    p_o = np.trace(counts) / total
    p_e = float(np.sum(counts.sum(axis=1) * counts.sum(axis=0)) / total**2)
    if abs(1.0 - p_e) < 1e-15:
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # zero row or column sum


@dataclass(frozen=True)
class AgreementReport:
    labels: tuple[str, ...]
    accuracy: float
    kappa: float
    per_class: dict[str, ClassMetrics]
    macro_f1: float
    n: int
    excluded: dict[str, int] = field(default_factory=dict)  # e.g. refused counts

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "n": self.n,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "macro_f1": self.macro_f1,
            "per_class": {
                l: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "degenerate": m.degenerate,
                }
                for l, m in self.per_class.items()
            },
            "excluded": dict(self.excluded),
        }

    def to_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def per_class_metrics(cm: ConfusionMatrix) -> tuple[dict[str, ClassMetrics], float]:
    """Per-class precision/recall/F1 and the unweighted macro-F1.

    Zero denominators (empty gold row or empty prediction column) yield 0
    for the affected metric and set the degenerate flag.
    """
    counts = cm.counts.astype(float)
    rowsum = counts.sum(axis=1)
    colsum = counts.sum(axis=0)
    diag = np.diag(counts)
    out: dict[str, ClassMetrics] = {}
    f1s = []
    for i, label in enumerate(cm.labels):
        degenerate = rowsum[i] == 0 or colsum[i] == 0
        recall = diag[i] / rowsum[i] if rowsum[i] > 0 else 0.0
        precision = diag[i] / colsum[i] if colsum[i] > 0 else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        out[label] = ClassMetrics(float(precision), float(recall), float(f1), bool(degenerate))
        f1s.append(f1)
    return out, float(np.mean(f1s))


def agreement_report(
    cm: ConfusionMatrix,
    exclude_error_column: bool = True,
    excluded_counts: Optional[dict[str, int]] = None,
) -> AgreementReport:
    """Full report from a confusion matrix.

    A synthetic ERROR column (refused/unparseable predictions) is by default
    excluded from the kappa/accuracy computation and reported separately.
    """
    scored = cm
    excluded = dict(excluded_counts or {})
    if exclude_error_column and ERROR_LABEL in cm.labels:
        j = cm.labels.index(ERROR_LABEL)
        excluded.setdefault("error_column", int(cm.counts[:, j].sum()))
        scored = cm.without_label(ERROR_LABEL)
    per_class, macro_f1 = per_class_metrics(scored)
    return AgreementReport(
        labels=scored.labels,
        accuracy=float(np.trace(scored.counts) / scored.total),
        kappa=cohens_kappa(scored),
        per_class=per_class,
        macro_f1=macro_f1,
        n=scored.total,
        excluded=excluded,
    )


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise DataError("spearman_rho needs two equal-length vectors of length >= 2")
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise DataError("spearman_rho is undefined for a constant vector")
    rx = rankdata(xs)
    ry = rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
