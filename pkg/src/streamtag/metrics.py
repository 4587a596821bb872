"""Clip-level mAP and segment/onset F1 metrics.

AP follows the rank-based definition: mean over positive items of the
precision at that item's rank, scores sorted descending with stable tie
order.  Segment and onset F1 are the usual sound-event-detection metrics:
micro-averaged over (segment, class) cells, and onset matching within a
0.2 s collar respectively.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class NoPositivesError(ValueError):
    """Raised when a metric needs at least one positive label."""


@dataclass(frozen=True)
class Event:
    """A labeled time span; onset/offset in seconds."""

    class_id: int
    onset_s: float
    offset_s: float

    def __post_init__(self):
        if not (0.0 <= self.onset_s < self.offset_s):
            raise ValueError(f"need 0 <= onset < offset, got [{self.onset_s}, {self.offset_s})")


def average_precision(scores, labels) -> float:
    """AP for one class over clips; ties keep stable input order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositivesError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order].astype(np.float64)
    precision_at = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision_at[hits > 0].sum() / n_pos)


def mean_ap(scores: np.ndarray, labels: np.ndarray) -> float:
    """Unweighted mean AP over classes that have at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("expected matching (n_clips, n_classes) matrices")
    aps = []
    for c in range(scores.shape[1]):
        if labels[:, c].sum() > 0:
            aps.append(average_precision(scores[:, c], labels[:, c]))
    if not aps:
        raise NoPositivesError("no class has a positive label")
    return float(np.mean(aps))


def _segment_counts(chunk_scores: np.ndarray, truth_events: list[Event],
                    chunk_s: float, threshold: float) -> tuple[int, int, int]:
    chunk_scores = np.asarray(chunk_scores, dtype=np.float64)
    if chunk_scores.ndim != 2:
        raise ValueError("chunk_scores must be (n_chunks, n_classes)")
    if chunk_s <= 0:
        raise ValueError("chunk_s must be positive")
    n_chunks, n_classes = chunk_scores.shape
    last_offset = max((ev.offset_s for ev in truth_events), default=0.0)
    n_segments = max(n_chunks, math.ceil(last_offset / chunk_s - 1e-9))
    pred = np.zeros((n_segments, n_classes), dtype=bool)
    pred[:n_chunks] = chunk_scores >= threshold
    truth = np.zeros_like(pred)
    for ev in truth_events:
        first = int(ev.onset_s / chunk_s + 1e-9)
        last = math.ceil(ev.offset_s / chunk_s - 1e-9)
        truth[first:last, ev.class_id] = True
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    # empty truth and empty predictions count as a perfect match
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def segment_f1(chunk_scores: np.ndarray, truth_events: list[Event],
               chunk_s: float, threshold: float = 0.5) -> float:
    """Micro-averaged F1 over a chunk_s-gridded (segment, class) matrix."""
    return f1_from_counts(*_segment_counts(chunk_scores, truth_events, chunk_s, threshold))


def events_from_scores(chunk_scores: np.ndarray, chunk_s: float,
                       threshold: float = 0.5) -> list[Event]:
    """Merge consecutive above-threshold chunks into per-class events."""
    chunk_scores = np.asarray(chunk_scores, dtype=np.float64)
    active = chunk_scores >= threshold
    events: list[Event] = []
    for c in range(active.shape[1]):
        start = None
        for t in range(active.shape[0]):
            if active[t, c] and start is None:
                start = t
            elif not active[t, c] and start is not None:
                events.append(Event(c, start * chunk_s, t * chunk_s))
                start = None
        if start is not None:
            events.append(Event(c, start * chunk_s, active.shape[0] * chunk_s))
    events.sort(key=lambda ev: (ev.onset_s, ev.class_id))
    return events


def _onset_matches(pred_events: list[Event], truth_events: list[Event],
                   collar_s: float) -> int:
    matched = 0
    remaining = sorted(truth_events, key=lambda ev: ev.onset_s)
    used = [False] * len(remaining)
    for pred in sorted(pred_events, key=lambda ev: ev.onset_s):
        for i, truth in enumerate(remaining):
            if used[i] or truth.class_id != pred.class_id:
                continue
            if abs(truth.onset_s - pred.onset_s) <= collar_s:
                used[i] = True
                matched += 1
                break
    return matched


def onset_f1(pred_events: list[Event], truth_events: list[Event],
             collar_s: float = 0.2) -> float:
    """Onset-based event F1 with greedy onset-order matching."""
    if not pred_events and not truth_events:
        return 1.0
    tp = _onset_matches(pred_events, truth_events, collar_s)
    fp = len(pred_events) - tp
    fn = len(truth_events) - tp
    return f1_from_counts(tp, fp, fn)


# --- ground-truth file ingestion ----------------------------------------

def read_strong_labels(path) -> dict[str, list[Event]]:
    """TSV rows (clip_id, onset_s, offset_s, class_id) -> events per clip."""
    events: dict[str, list[Event]] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#"):
                continue
            clip_id, onset, offset, class_id = row[:4]
            events.setdefault(clip_id, []).append(
                Event(int(class_id), float(onset), float(offset))
            )
    return events


def read_weak_labels(path) -> dict[str, list[int]]:
    """CSV rows (clip_id, semicolon-joined class ids) -> class list per clip."""
    labels: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            clip_id = row[0]
            ids = ";".join(row[1:])
            labels[clip_id] = [int(tok) for tok in ids.replace(",", ";").split(";") if tok.strip()]
    return labels
