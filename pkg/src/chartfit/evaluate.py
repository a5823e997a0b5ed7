"""Stratified splitting, confusion counts and per-class classification reports."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

CLASS_NAMES = ("Non-charting (False)", "Charting (True)")


def _round_half_up(x: float) -> int:
    # the epsilon absorbs products such as 3590 * 0.2 = 718.0000000000001
    return int(math.floor(x + 0.5 + 1e-9))


def stratified_split_indices(labels, ratio: float, seed: int):
    """Per-class uniform draw of ``round_half_up(class_size * ratio)`` validation rows.

    Returns sorted ``(train_idx, val_idx)`` index arrays.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("stratified split needs both classes")
    rng = np.random.default_rng(seed)
    val_parts = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        n_val = _round_half_up(len(members) * ratio)
        if n_val == 0:
            raise ValueError(f"class {c!r} would receive no validation rows")
        if n_val == len(members):
            raise ValueError(f"class {c!r} would receive no training rows")
        val_parts.append(rng.choice(members, size=n_val, replace=False))
    val_idx = np.sort(np.concatenate(val_parts))
    train_mask = np.ones(len(labels), dtype=bool)
    train_mask[val_idx] = False
    return np.flatnonzero(train_mask), val_idx


def stratified_split(dataset, ratio: float = 0.2, seed: int = 0):
    """Split a ``LabeledDataset`` into train/validation lists of ``(record, label)``."""
    items = dataset.items()
    train_idx, val_idx = stratified_split_indices([c for _, c in items], ratio, seed)
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with class 1 (charting) as the positive class."""
    p = np.asarray(predictions).astype(int).ravel()
    t = np.asarray(labels).astype(int).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} labels")
    if p.size == 0:
        raise ValueError("nothing to evaluate")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    classes: dict[int, ClassMetrics]
    accuracy: float
    support: int
    confusion: ConfusionMatrix
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "classes": {
                str(c): {"name": CLASS_NAMES[c], **asdict(m)} for c, m in self.classes.items()
            },
            "accuracy": self.accuracy,
            "support": self.support,
            "confusion": asdict(self.confusion),
            "normalized_confusion": normalized_confusion(self.confusion).tolist()
            if all(self.classes[c].support for c in (0, 1))
            else None,
            "flags": list(self.flags),
        }


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> ClassificationReport:
    """Accuracy plus precision/recall/F1 with each class taken as positive in turn.

    Zero denominators give 0.0 and add a flag such as ``"precision[1]=0/0"``.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    flags: list[str] = []
    per_class = {}
    # (tp, fp, fn) when the class in question is treated as positive
    counts = {1: (cm.tp, cm.fp, cm.fn), 0: (cm.tn, cm.fn, cm.fp)}
    for c in (0, 1):
        tp, fp, fn = counts[c]
        precision = _ratio(tp, tp + fp, f"precision[{c}]=0/0", flags)
        recall = _ratio(tp, tp + fn, f"recall[{c}]=0/0", flags)
        f1 = _ratio(2 * precision * recall, precision + recall, f"f1[{c}]=0/0", flags)
        per_class[c] = ClassMetrics(precision, recall, f1, tp + fn)
    accuracy = (cm.tp + cm.tn) / cm.total
    return ClassificationReport(per_class, accuracy, cm.total, cm, flags)


def normalized_confusion(cm: ConfusionMatrix) -> np.ndarray:
    """Rows are true classes (0, 1), columns predicted classes; rows sum to one."""
    rows = np.array([[cm.tn, cm.fp], [cm.fn, cm.tp]], dtype=np.float64)
    support = rows.sum(axis=1, keepdims=True)
    if np.any(support == 0):
        raise ValueError("a true class has no rows; cannot normalize")
    return rows / support


def format_report(report: ClassificationReport, title: str | None = None) -> str:
    """Plain-text table: per-class precision/recall/F1/support plus accuracy."""
    width = max(len(n) for n in CLASS_NAMES) + 2
    lines = []
    if title:
        lines += [title, ""]
    lines.append(f"{'':<{width}}{'Precision':>10}{'Recall':>10}{'F1-score':>10}{'Support':>10}")
    for c in (0, 1):
        m = report.classes[c]
        lines.append(
            f"{CLASS_NAMES[c]:<{width}}{m.precision:>10.3f}{m.recall:>10.3f}{m.f1:>10.3f}{m.support:>10,d}"
        )
    lines.append(
        f"{'Accuracy':<{width}}{'':>10}{'':>10}{report.accuracy:>10.3f}{report.support:>10,d}"
    )
    if report.flags:
        lines.append(f"flags: {', '.join(report.flags)}")
    return "\n".join(lines) + "\n"
