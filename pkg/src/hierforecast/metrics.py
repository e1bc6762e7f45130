"""Segment and frame metrics for evaluating forecasts over a prediction horizon.

Segments are ``(label, start, end)`` triples with half-open frame intervals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError

Segment = tuple[int, int, int]


def iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a[2], b[2]) - max(a[1], b[1]))
    union = (a[2] - a[1]) + (b[2] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def frames_to_segments(frames) -> list[Segment]:
    out = []
    frames = np.asarray(frames)
    start = 0
    for k in range(1, len(frames) + 1):
        if k == len(frames) or frames[k] != frames[start]:
            out.append((int(frames[start]), start, k))
            start = k
    return out


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    defined: bool = True


def _max_matching(pred, gt, k):
    """One-to-one same-label matching with IoU >= k and the most pairs.

    Augmenting paths (Kuhn); each prediction tries its candidates in order of
    decreasing IoU, earlier ground-truth start first on ties, so the result
    coincides with the greedy best-IoU assignment whenever that one is
    already maximal.
    """
    candidates = []
    for p in pred:
        scored = [(iou(p, g), j) for j, g in enumerate(gt) if g[0] == p[0]]
        scored = [(s, j) for s, j in scored if s >= k]
        scored.sort(key=lambda sj: (-sj[0], gt[sj[1]][1]))
        candidates.append([j for _, j in scored])
    owner = [-1] * len(gt)

    def augment(i, seen):
        for j in candidates[i]:
            if seen[j]:
                continue
            seen[j] = True
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, [False] * len(gt)) for i in range(len(pred)))


def f1_at_k(pred: Sequence[Segment], gt: Sequence[Segment], k: float = 0.25) -> F1Result:
    """Segmental F1 where a prediction is a hit if matched to a same-label
    ground-truth segment with IoU >= k; each ground-truth segment matches once.
    """
    if not 0.0 < k < 1.0:
        raise ContractError(f"f1_at_k: k must lie in (0, 1), got {k}")
    pred = sorted(pred, key=lambda s: s[1])
    gt = sorted(gt, key=lambda s: s[1])
    tp = _max_matching(pred, gt, k)
    fp = len(pred) - tp
    fn = len(gt) - tp
    precision = tp / len(pred) if pred else 0.0
    if not gt:
        return F1Result(float("nan"), precision, float("nan"), tp, fp, fn, defined=False)
    recall = tp / len(gt)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return F1Result(f1, precision, recall, tp, fp, fn)


def _check_horizon(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"timelines differ in length: {pred.shape[0]} vs {gt.shape[0]}")
    return pred, gt


def moc(pred, gt) -> float:
    """Mean over ground-truth classes of per-class frame accuracy."""
    pred, gt = _check_horizon(pred, gt)
    if gt.size == 0:
        return float("nan")
    accs = [float(np.mean(pred[gt == c] == c)) for c in np.unique(gt)]
    return float(np.mean(accs))


def moc_counts(pred, gt) -> dict[int, tuple[int, int]]:
    """Per-class (correct, total) frame counts, for corpus-pooled MoC."""
    pred, gt = _check_horizon(pred, gt)
    return {int(c): (int(np.sum(pred[gt == c] == c)), int(np.sum(gt == c))) for c in np.unique(gt)}


def pooled_moc(counts: Sequence[dict[int, tuple[int, int]]]) -> float:
    merged: dict[int, list[int]] = {}
    for per_video in counts:
        for c, (ok, n) in per_video.items():
            acc = merged.setdefault(c, [0, 0])
            acc[0] += ok
            acc[1] += n
    if not merged:
        return float("nan")
    return float(np.mean([ok / n for ok, n in merged.values()]))


def mof(pred, gt) -> float:
    pred, gt = _check_horizon(pred, gt)
    if gt.size == 0:
        return float("nan")
    return float(np.mean(pred == gt))


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def segmental_edit_distance(pred: Sequence, gt: Sequence) -> float:
    """1 - Levenshtein(pred, gt) / max(len); two empty sequences score 1."""
    n = max(len(pred), len(gt))
    if n == 0:
        return 1.0
    return 1.0 - levenshtein(list(pred), list(gt)) / n


def dedupe(labels: Sequence) -> list:
    out = []
    for x in labels:
        if not out or out[-1] != x:
            out.append(x)
    return out
