"""Identification, classification and recovery metrics."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..errors import InvalidInput

# headline figures of the physical kitting study, kept for side-by-side reporting
REFERENCE_VALUES = {
    "identification_accuracy": 0.9309,
    "identification_precision": 0.9409,
    "identification_recall": 0.9798,
    "classification_accuracy": 0.9615,
}
DEFAULT_TOLERANCE = 1.0


@dataclass
class IdentificationMetrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    duplicates: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 1.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn, "duplicates": self.duplicates,
            "precision": self.precision, "recall": self.recall, "accuracy": self.accuracy,
        }


def match_flags(
    flags: Sequence[float], events: Sequence[tuple[float, float]], tolerance: float = DEFAULT_TOLERANCE
) -> tuple[int, int, int, int]:
    """Greedy one-to-one matching in time order.

    A flag matches an unmatched event when it lies within ``tolerance`` of
    the event interval.  A flag that falls inside an already matched event's
    interval is a duplicate of that detection, not a false positive.
    Returns ``(tp, fp, fn, duplicates)``.
    """
    events = sorted((float(a), float(b)) for a, b in events)
    matched = [False] * len(events)
    tp = fp = dup = 0
    for f in sorted(flags):
        hit = None
        for k, (a, b) in enumerate(events):
            if not matched[k] and a - tolerance <= f <= b + tolerance:
                hit = k
                break
        if hit is not None:
            matched[hit] = True
            tp += 1
        elif any(m and a - tolerance <= f <= b + tolerance for m, (a, b) in zip(matched, events)):
            dup += 1
        else:
            fp += 1
    return tp, fp, len(events) - tp, dup


def evaluate_identification(
    flags_per_trial: Sequence[Sequence[float]],
    events_per_trial: Sequence[Sequence[tuple[float, float]]],
    tolerance: float = DEFAULT_TOLERANCE,
) -> IdentificationMetrics:
    """Pool event-level matches over trials; flag-free nominal trials are true negatives."""
    if len(flags_per_trial) != len(events_per_trial):
        raise InvalidInput("flags and events must cover the same trials")
    m = IdentificationMetrics()
    for flags, events in zip(flags_per_trial, events_per_trial):
        tp, fp, fn, dup = match_flags(flags, events, tolerance)
        m.tp += tp
        m.fp += fp
        m.fn += fn
        m.duplicates += dup
        if not events and not flags:
            m.tn += 1
    return m


@dataclass
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise InvalidInput("confusion matrix must be square over its labels")
        if np.any(self.counts < 0):
            raise InvalidInput("confusion counts must be non-negative")

    @classmethod
    def from_pairs(cls, truth: Sequence[str], pred: Sequence[str], labels: Sequence[str] | None = None):
        if len(truth) != len(pred):
            raise InvalidInput("truth and predictions differ in length")
        labels = tuple(labels) if labels is not None else tuple(dict.fromkeys([*truth, *pred]))
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(truth, pred):
            if t not in index or p not in index:
                raise InvalidInput(f"label outside alphabet: {t if t not in index else p!r}")
            counts[index[t], index[p]] += 1
        return cls(labels, counts)

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def recall(self) -> np.ndarray:
        s = self.support
        return np.divide(np.diag(self.counts), s, out=np.full(len(s), np.nan), where=s > 0)

    def precision(self) -> np.ndarray:
        s = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), s, out=np.full(len(s), np.nan), where=s > 0)

    @property
    def accuracy(self) -> float:
        """Mean per-class true-positive rate over classes that occur."""
        r = self.recall()
        return float(np.nanmean(r)) if np.any(np.isfinite(r)) else float("nan")

    @property
    def overall_accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else float("nan")

    def macro_precision(self) -> float:
        return float(np.nanmean(self.precision()))

    def macro_recall(self) -> float:
        return float(np.nanmean(self.recall()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred", *self.labels])
        for lab, row in zip(self.labels, self.counts):
            w.writerow([lab, *row.tolist()])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist(), "accuracy": self.accuracy}


def evaluate_classification(
    truth: Sequence[str], pred: Sequence[str], labels: Sequence[str] | None = None
) -> ConfusionMatrix:
    return ConfusionMatrix.from_pairs(truth, pred, labels)


def _default_key(trace) -> tuple[str, str]:
    scripted = [e for e in trace.events if e.scripted]
    if not scripted:
        return ("-", "none")
    return (scripted[0].node, scripted[0].cls)


def evaluate_success(
    traces: Iterable, modality: str | None = None, key: Callable | None = None
) -> dict[tuple[str, str, str], dict]:
    """Success counts grouped by ``(node, class, modality)``.

    ``key(trace)`` returns ``(node, class)``; the default uses the first
    scripted anomaly of the trace.
    """
    key = key or _default_key
    table: dict[tuple[str, str, str], dict] = {}
    for tr in traces:
        mod = modality or tr.modality
        node, cls = key(tr)
        cell = table.setdefault((node, cls, mod), {"successes": 0, "total": 0})
        cell["total"] += 1
        cell["successes"] += int(tr.success)
    for cell in table.values():
        cell["rate"] = cell["successes"] / cell["total"]
    return dict(sorted(table.items()))


def grid_to_csv(pre_grid: Sequence[float], post_grid: Sequence[float], acc: np.ndarray) -> str:
    """Rows are pre-flag windows, columns post-flag windows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pre\\post", *[repr(float(p)) for p in post_grid]])
    for pre, row in zip(pre_grid, np.asarray(acc)):
        w.writerow([repr(float(pre)), *[repr(float(v)) for v in row]])
    return buf.getvalue()


@dataclass
class MetricsReport:
    identification: IdentificationMetrics | None = None
    identification_by_node: dict[str, IdentificationMetrics] = field(default_factory=dict)
    classification: ConfusionMatrix | None = None
    success: dict[tuple[str, str, str], dict] = field(default_factory=dict)
    reactivity: dict | None = None
    trial_counts: dict[str, int] = field(default_factory=dict)
    references: Mapping[str, float] = field(default_factory=lambda: dict(REFERENCE_VALUES))

    def to_dict(self) -> dict:
        out: dict = {"trial_counts": dict(self.trial_counts), "references": dict(self.references)}
        if self.identification is not None:
            out["identification"] = self.identification.to_dict()
            out["identification_by_node"] = {k: v.to_dict() for k, v in sorted(self.identification_by_node.items())}
        if self.classification is not None:
            out["classification"] = self.classification.to_dict()
        if self.success:
            out["success"] = [
                {"node": n, "class": c, "modality": m, **cell} for (n, c, m), cell in self.success.items()
            ]
        if self.reactivity is not None:
            out["reactivity"] = self.reactivity
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_markdown(self) -> str:
        lines = ["# Metrics report", ""]
        if self.trial_counts:
            lines += ["## Trial counts", ""] + [f"- {k}: {v}" for k, v in sorted(self.trial_counts.items())] + [""]
        ref = self.references
        if self.identification is not None:
            m = self.identification
            lines += [
                "## Identification", "",
                "| metric | value | physical-study reference |", "|---|---|---|",
                f"| accuracy | {m.accuracy:.4f} | {ref.get('identification_accuracy', float('nan')):.4f} |",
                f"| precision | {m.precision:.4f} | {ref.get('identification_precision', float('nan')):.4f} |",
                f"| recall | {m.recall:.4f} | {ref.get('identification_recall', float('nan')):.4f} |",
                "",
            ]
        if self.classification is not None:
            cm = self.classification
            lines += [
                "## Classification", "",
                f"Mean per-class accuracy {cm.accuracy:.4f} "
                f"(physical-study reference {ref.get('classification_accuracy', float('nan')):.4f})", "",
                "| truth \\ pred | " + " | ".join(cm.labels) + " |",
                "|---" * (len(cm.labels) + 1) + "|",
            ]
            lines += [f"| {lab} | " + " | ".join(str(v) for v in row) + " |" for lab, row in zip(cm.labels, cm.counts)]
            lines.append("")
        if self.success:
            lines += ["## Recovery success", "", "| node | class | modality | success | total | rate |",
                      "|---|---|---|---|---|---|"]
            lines += [
                f"| {n} | {c} | {m} | {cell['successes']} | {cell['total']} | {cell['rate']:.3f} |"
                for (n, c, m), cell in self.success.items()
            ]
            lines.append("")
        if self.reactivity is not None:
            r = self.reactivity
            lines += ["## Reactivity", "", "| pre \\ post | " + " | ".join(str(p) for p in r["post"]) + " |",
                      "|---" * (len(r["post"]) + 1) + "|"]
            lines += [
                f"| {pre} | " + " | ".join(f"{v:.3f}" for v in row) + " |" for pre, row in zip(r["pre"], r["accuracy"])
            ]
            lines.append("")
        return "\n".join(lines)
