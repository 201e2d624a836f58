from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes 1..M, columns predicted classes 1..M.

    ``unassigned[k]`` counts class-(k+1) pixels predicted as 0 (background);
    they stay out of ``counts`` but still count towards ``total``.
    """

    counts: np.ndarray
    unassigned: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unassigned.sum())

    @property
    def flagged(self) -> bool:
        return bool(self.unassigned.any())

    def to_csv(self) -> str:
        m = len(self.counts)
        head = "true\\pred," + ",".join(str(k) for k in range(1, m + 1)) + ",unassigned"
        rows = [
            f"{k + 1}," + ",".join(str(int(v)) for v in self.counts[k]) + f",{int(self.unassigned[k])}"
            for k in range(m)
        ]
        return "\n".join([head, *rows]) + "\n"


def confusion(pred: np.ndarray, truth: np.ndarray, eval_idx: np.ndarray, num_classes: int | None = None) -> ConfusionMatrix:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    idx = np.asarray(eval_idx, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty evaluation set")
    t = truth[idx]
    p = pred[idx]
    if np.any(t == 0):
        raise ValueError("evaluation set contains unlabeled pixels")
    m = num_classes if num_classes is not None else int(max(t.max(), p.max()))
    if t.max() > m or p.max() > m:
        raise ValueError(f"labels exceed the {m} classes")
    cm = np.zeros((m, m), dtype=np.int64)
    hit = p > 0
    np.add.at(cm, (t[hit] - 1, p[hit] - 1), 1)
    unassigned = np.bincount(t[~hit] - 1, minlength=m).astype(np.int64)
    return ConfusionMatrix(cm, unassigned)


@dataclass(frozen=True)
class MetricsReport:
    per_class: np.ndarray  # NaN for classes with no true pixels
    support: np.ndarray
    oa: float
    aa: float
    kappa: float
    n: int
    kappa_degenerate: bool = False

    def to_text(self) -> str:
        lines = ["class\tn_test\taccuracy"]
        for k, (acc, n) in enumerate(zip(self.per_class, self.support), start=1):
            acc_s = "-" if np.isnan(acc) else f"{100 * acc:.2f}"
            lines.append(f"{k}\t{int(n)}\t{acc_s}")
        lines.append(f"OA\t{self.n}\t{100 * self.oa:.2f}")
        lines.append(f"AA\t\t{100 * self.aa:.2f}")
        flag = " (degenerate)" if self.kappa_degenerate else ""
        lines.append(f"Kappa\t\t{self.kappa:.4f}{flag}")
        return "\n".join(lines) + "\n"


def report(cm: ConfusionMatrix | np.ndarray) -> MetricsReport:
    """OA, AA, Cohen's kappa and per-class accuracy from a confusion matrix."""
    if isinstance(cm, ConfusionMatrix):
        counts, unassigned = cm.counts, cm.unassigned
    else:
        counts = np.asarray(cm, dtype=np.int64)
        unassigned = np.zeros(len(counts), dtype=np.int64)
    rows = counts.sum(axis=1) + unassigned
    cols = counts.sum(axis=0)
    n = int(rows.sum())
    if n == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(counts).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, diag / rows, np.nan)
    oa = float(diag.sum() / n)
    aa = float(np.nanmean(per_class))
    pe = float((rows.astype(np.float64) * cols).sum() / (float(n) * n))
    degenerate = pe >= 1.0
    kappa = 0.0 if degenerate else (oa - pe) / (1.0 - pe)
    return MetricsReport(per_class, rows, oa, aa, float(kappa), n, degenerate)
