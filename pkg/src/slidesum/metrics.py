"""Evaluation kit: confusion/precision/recall/F1, temporally tolerant event
matching, and the naive pixel-difference detector the network must beat."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .categories import NUM_CATEGORIES


def _event_frame(event) -> int:
    return int(getattr(event, "frame_index", event))


def confusion_matrix(pred, truth, k: int = NUM_CATEGORIES) -> np.ndarray:
    """k x k counts; rows are truth, columns are prediction."""
    p = np.asarray([int(v) for v in pred], dtype=np.int64)
    t = np.asarray([int(v) for v in truth], dtype=np.int64)
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} labels")
    if p.size == 0:
        raise ValueError("empty inputs")
    if p.min() < 0 or p.max() >= k or t.min() < 0 or t.max() >= k:
        raise ValueError(f"categories must lie in [0,{k})")
    matrix = np.zeros((k, k), dtype=np.int64)
    np.add.at(matrix, (t, p), 1)
    return matrix


@dataclass
class CategoryScores:
    precision: float
    recall: float
    f1: float


@dataclass
class Metrics:
    confusion: np.ndarray
    accuracy: float
    per_category: list[CategoryScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "per_category": [
                {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                for s in self.per_category
            ],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0  # 0/0 defined as 0


def prf1(matrix: np.ndarray) -> Metrics:
    """Standard per-category precision/recall/F1 plus unweighted macro averages."""
    matrix = np.asarray(matrix, dtype=np.int64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {matrix.shape}")
    k = matrix.shape[0]
    scores = []
    for c in range(k):
        tp = float(matrix[c, c])
        precision = _safe_div(tp, float(matrix[:, c].sum()))
        recall = _safe_div(tp, float(matrix[c, :].sum()))
        f1 = _safe_div(2 * precision * recall, precision + recall)
        scores.append(CategoryScores(precision, recall, f1))
    total = float(matrix.sum())
    return Metrics(
        confusion=matrix,
        accuracy=_safe_div(float(np.trace(matrix)), total),
        per_category=scores,
        macro_precision=float(np.mean([s.precision for s in scores])),
        macro_recall=float(np.mean([s.recall for s in scores])),
        macro_f1=float(np.mean([s.f1 for s in scores])),
    )


@dataclass
class EventMatchReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    matched: list[tuple[int, int]] = field(default_factory=list)  # (truth, prediction)

    def to_dict(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matched": [list(pair) for pair in self.matched],
        }


def match_transitions(pred_events, true_events, tolerance: int) -> EventMatchReport:
    """Greedy one-to-one matching: truths in increasing order each take the
    nearest unmatched prediction within +-tolerance (ties go to the earlier
    prediction); leftovers count as false positives / negatives."""
    pred = [_event_frame(e) for e in pred_events]
    truth = [_event_frame(e) for e in true_events]
    if pred != sorted(pred) or truth != sorted(truth):
        raise ValueError("event lists must be sorted by frame")
    taken = [False] * len(pred)
    matched: list[tuple[int, int]] = []
    for t in truth:
        best = None
        best_dist = None
        for i, p in enumerate(pred):
            if taken[i]:
                continue
            dist = abs(p - t)
            if dist <= tolerance and (best_dist is None or dist < best_dist):
                best, best_dist = i, dist
        if best is not None:
            taken[best] = True
            matched.append((t, pred[best]))
    tp = len(matched)
    fp = len(pred) - tp
    fn = len(truth) - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return EventMatchReport(tp, fp, fn, precision, recall, f1, matched)


def frame_differences(frames: np.ndarray) -> np.ndarray:
    """Mean absolute intensity change between consecutive frames; entry i is
    the difference between frame i and frame i-1."""
    a = frames.astype(np.float64)
    return np.abs(a[1:] - a[:-1]).mean(axis=(1, 2))


def pixel_diff_baseline(seq, threshold: float):
    """Naive detector: frames whose mean absolute difference from the previous
    frame exceeds the threshold, merged into runs, one event per run center."""
    from .summarize import TransitionEvent

    frames = seq.frames if hasattr(seq, "frames") else np.asarray(seq)
    if frames.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    diffs = frame_differences(frames)
    hot = diffs > threshold
    events = []
    i = 0
    while i < hot.size:
        if hot[i]:
            j = i
            while j + 1 < hot.size and hot[j + 1]:
                j += 1
            first, last = i + 1, j + 1  # diff index i describes frame i+1
            peak = float(diffs[i:j + 1].max())
            events.append(
                TransitionEvent(
                    frame_index=(first + last) // 2,
                    confidence=min(1.0, peak / 255.0),
                )
            )
            i = j + 1
        else:
            i += 1
    return events


def format_report(metrics: Metrics, category_names) -> str:
    """Aligned human-readable table for terminal output."""
    lines = []
    header = f"{'category':<12} {'precision':>9} {'recall':>9} {'f1':>9}"
    lines.append(header)
    for name, s in zip(category_names, metrics.per_category):
        lines.append(f"{name:<12} {s.precision:>9.4f} {s.recall:>9.4f} {s.f1:>9.4f}")
    lines.append(
        f"{'macro':<12} {metrics.macro_precision:>9.4f} "
        f"{metrics.macro_recall:>9.4f} {metrics.macro_f1:>9.4f}"
    )
    lines.append(f"accuracy: {metrics.accuracy:.4f}")
    lines.append("confusion (rows=truth, cols=pred):")
    for row in metrics.confusion:
        lines.append("  " + " ".join(f"{v:>6d}" for v in row))
    return "\n".join(lines)
