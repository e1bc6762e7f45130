"""Two-level activity hierarchies with relative durations.

Level 0 holds coarse activities whose durations are fractions of the whole
task.  Level 1 holds fine actions; each fine duration is a fraction of its
parent's span and ``parent_index`` links it to the coarse segment.  Types
accept any number of levels, but splitting and frame expansion assume the
parent of level ``l`` lives at level ``l - 1``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import groupby
from typing import Sequence

import numpy as np

from .errors import ContractError

SUM_TOL = 1e-6
BOUNDARY_TOL = 1e-9
COARSE, FINE = 0, 1


@dataclass(frozen=True)
class ActionSegment:
    label: int
    rel_duration: float


@dataclass(frozen=True)
class LevelSequence:
    segments: tuple[ActionSegment, ...]
    parent_index: tuple[int, ...] | None = None

    def __len__(self):
        return len(self.segments)

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.segments]

    @property
    def durations(self) -> list[float]:
        return [s.rel_duration for s in self.segments]


@dataclass(frozen=True)
class ActivityHierarchy:
    levels: tuple[LevelSequence, ...]
    task_id: int | str = 0
    total_frames: int = 1000

    @property
    def coarse(self) -> LevelSequence:
        return self.levels[COARSE]

    @property
    def fine(self) -> LevelSequence:
        return self.levels[FINE]

    def children(self, parent: int, level: int = FINE) -> list[int]:
        seq = self.levels[level]
        return [k for k, p in enumerate(seq.parent_index) if p == parent]


def make_hierarchy(coarse: Sequence[tuple[int, float]], fine: Sequence[tuple[int, float, int]],
                   task_id=0, total_frames: int = 1000) -> ActivityHierarchy:
    """Build from ``[(label, d)]`` and ``[(label, d, parent)]`` lists."""
    c = LevelSequence(tuple(ActionSegment(int(l), float(d)) for l, d in coarse))
    f = LevelSequence(tuple(ActionSegment(int(l), float(d)) for l, d, _ in fine),
                      tuple(int(p) for _, _, p in fine))
    return ActivityHierarchy((c, f), task_id, total_frames)


# ---------------------------------------------------------------------------
# validation

def validate(h: ActivityHierarchy) -> list[str]:
    """Every structural violation, as ``"<what> at (<level>,<index>)"`` strings."""
    report = []
    names = ["c", "f"] + [str(l) for l in range(2, len(h.levels))]
    if h.total_frames <= 0:
        report.append(f"total_frames must be positive, got {h.total_frames}")
    for l, seq in enumerate(h.levels):
        tag = names[l]
        if not seq.segments:
            report.append(f"empty level {tag}")
            continue
        for k, seg in enumerate(seq.segments):
            if not seg.rel_duration > 0 or not np.isfinite(seg.rel_duration):
                report.append(f"non-positive duration {seg.rel_duration} at ({tag},{k})")
        if l == 0:
            s = sum(seq.durations)
            if abs(s - 1.0) > SUM_TOL:
                report.append(f"top-level durations sum to {s:.9f} != 1 at ({tag},*)")
            continue
        parents = seq.parent_index
        n_parents = len(h.levels[l - 1].segments)
        if parents is None or len(parents) != len(seq.segments):
            report.append(f"missing parent indices at level {tag}")
            continue
        for k in range(1, len(parents)):
            if parents[k] < parents[k - 1]:
                report.append(f"parent indices not contiguous at ({tag},{k})")
        for k, p in enumerate(parents):
            if not 0 <= p < n_parents:
                report.append(f"parent index {p} out of range at ({tag},{k})")
        sums: dict[int, float] = {}
        for p, seg in zip(parents, seq.segments):
            sums[p] = sums.get(p, 0.0) + seg.rel_duration
        ptag = names[l - 1]
        for p in range(n_parents):
            if p not in sums:
                report.append(f"no children for ({ptag},{p})")
            elif abs(sums[p] - 1.0) > SUM_TOL:
                report.append(f"children sum {sums[p]:.9f} != 1 at ({ptag},{p})")
    return report


def accumulated(seq: LevelSequence, scope: str = "parent") -> list[float]:
    """Running sums of durations; with ``scope="parent"`` they restart per parent."""
    if not seq.segments:
        raise ContractError("accumulated: empty sequence")
    out = []
    running = 0.0
    prev_parent = None
    for k, seg in enumerate(seq.segments):
        parent = seq.parent_index[k] if (scope == "parent" and seq.parent_index is not None) else None
        if parent != prev_parent:
            running = 0.0
            prev_parent = parent
        running += seg.rel_duration
        out.append(running)
    return out


def absolute_intervals(h: ActivityHierarchy, level: int) -> list[tuple[int, float, float]]:
    """``(label, start, end)`` as fractions of the whole task."""
    coarse = []
    t = 0.0
    for seg in h.coarse.segments:
        coarse.append((seg.label, t, t + seg.rel_duration))
        t += seg.rel_duration
    if level == COARSE:
        return coarse
    out = []
    starts = {}
    for seg, p in zip(h.fine.segments, h.fine.parent_index):
        _, ps, pe = coarse[p]
        span = pe - ps
        a = starts.get(p, 0.0)
        out.append((seg.label, ps + a * span, ps + (a + seg.rel_duration) * span))
        starts[p] = a + seg.rel_duration
    return out


# ---------------------------------------------------------------------------
# observation splits

@dataclass(frozen=True)
class Partial:
    """The segment straddling t* at one level.

    ``partial`` is the observed part and ``accumulated`` the running sum up to
    t*, both relative to the parent span (the whole task at the top level).
    """

    index: int
    label: int
    partial: float
    accumulated: float
    parent: int | None = None


@dataclass(frozen=True)
class ObservationSplit:
    observed: ActivityHierarchy
    partial: tuple[Partial | None, ...]
    future: ActivityHierarchy
    t_star: float
    # per level: running sum of finished segments inside the current scope
    observed_accumulated: tuple[float, ...] = field(default=(0.0, 0.0))

    @property
    def total_frames(self) -> int:
        return self.observed.total_frames

    @property
    def task_id(self):
        return self.observed.task_id

    @property
    def has_truth(self) -> bool:
        return bool(self.future.coarse.segments)

    def remaining(self, level: int) -> float:
        """Ground-truth remaining length of the interrupted segment (0 if none)."""
        part = self.partial[level]
        if part is None:
            return 0.0
        return self.future.levels[level].segments[0].rel_duration - part.partial


def _locate(starts_ends, p):
    """Index of the interval with start < p < end, or -(k+1) if p ends interval k."""
    for k, (s, e) in enumerate(starts_ends):
        if abs(p - e) <= BOUNDARY_TOL:
            return -(k + 1)
        if s < p < e:
            return k
    raise ContractError(f"point {p} not covered by intervals")


def split_at(h: ActivityHierarchy, p: float) -> ObservationSplit:
    """Interrupt ``h`` at fraction ``p`` of the task."""
    if not 0.0 < p < 1.0:
        raise ContractError(f"split_at: p must lie in (0, 1), got {p}")
    coarse_iv = absolute_intervals(h, COARSE)
    fine_iv = absolute_intervals(h, FINE)
    ci = _locate([(s, e) for _, s, e in coarse_iv], p)

    c_segs = h.coarse.segments
    f_segs = h.fine.segments
    f_par = h.fine.parent_index

    if ci < 0:
        n_c = -ci
        c_partial = None
        n_f = sum(1 for q in f_par if q < n_c)
        f_partial = None
        acc_c = sum(s.rel_duration for s in c_segs[:n_c])
        acc_f = 0.0
    else:
        n_c = ci
        _, cs, ce = coarse_iv[ci]
        acc_before = sum(s.rel_duration for s in c_segs[:ci])
        c_partial = Partial(ci, c_segs[ci].label, p - cs, acc_before + (p - cs))
        acc_c = acc_before
        kids = [k for k, q in enumerate(f_par) if q == ci]
        fj = _locate([(fine_iv[k][1], fine_iv[k][2]) for k in kids], p)
        span = ce - cs
        if fj < 0:
            n_f = kids[-fj - 1] + 1
            f_partial = None
            acc_f = (p - cs) / span
        else:
            j = kids[fj]
            n_f = j
            _, fs, _ = fine_iv[j]
            acc_f = sum(f_segs[k].rel_duration for k in kids[:fj])
            f_partial = Partial(j, f_segs[j].label, (p - fs) / span, (p - cs) / span, parent=ci)
        # an exact fine boundary still leaves the coarse activity open
    observed = ActivityHierarchy(
        (LevelSequence(c_segs[:n_c]), LevelSequence(f_segs[:n_f], f_par[:n_f])),
        h.task_id, h.total_frames)
    future = ActivityHierarchy(
        (LevelSequence(c_segs[n_c:]), LevelSequence(f_segs[n_f:], f_par[n_f:])),
        h.task_id, h.total_frames)
    return ObservationSplit(observed, (c_partial, f_partial), future, float(p), (acc_c, acc_f))


def reassemble(split: ObservationSplit) -> ActivityHierarchy:
    levels = []
    for obs, fut in zip(split.observed.levels, split.future.levels):
        parents = None
        if obs.parent_index is not None:
            parents = obs.parent_index + fut.parent_index
        levels.append(LevelSequence(obs.segments + fut.segments, parents))
    return ActivityHierarchy(tuple(levels), split.task_id, split.total_frames)


def observed_intervals(split: ObservationSplit, level: int) -> list[tuple[int, float, float]]:
    """Absolute intervals seen before t*, the interrupted one cut at t*.

    Only observed quantities are used: fine actions under the open coarse
    activity are placed so that their accumulated duration at t* lands on t*.
    """
    obs = split.observed
    coarse = []
    t = 0.0
    for seg in obs.coarse.segments:
        coarse.append((seg.label, t, t + seg.rel_duration))
        t += seg.rel_duration
    cp = split.partial[COARSE]
    if level == COARSE:
        if cp is not None:
            coarse.append((cp.label, t, split.t_star))
        return coarse
    fp = split.partial[FINE]
    spans = {i: (s, e - s) for i, (_, s, e) in enumerate(coarse)}
    if cp is not None:
        acc_now = fp.accumulated if fp is not None else split.observed_accumulated[FINE]
        spans[cp.index] = (t, (split.t_star - t) / acc_now)
    out = []
    starts: dict[int, float] = {}
    for seg, p in zip(obs.fine.segments, obs.fine.parent_index):
        origin, span = spans[p]
        a = starts.get(p, 0.0)
        out.append((seg.label, origin + a * span, origin + (a + seg.rel_duration) * span))
        starts[p] = a + seg.rel_duration
    if fp is not None:
        origin, span = spans[cp.index]
        out.append((fp.label, origin + (fp.accumulated - fp.partial) * span, split.t_star))
    return out


# ---------------------------------------------------------------------------
# frames

def largest_remainder(fractions: Sequence[float], total: int) -> list[int]:
    """Integer spans summing to ``total``, proportional to ``fractions``.

    Leftover units go to the largest fractional remainders, earliest first on
    ties.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.size == 0:
        return []
    s = fr.sum()
    raw = fr / s * total if s > 0 else np.full(fr.size, total / fr.size)
    base = np.floor(raw + 1e-9).astype(int)
    base = np.minimum(base, total)
    leftover = int(total - base.sum())
    rema = raw - base
    order = sorted(range(fr.size), key=lambda k: (-round(rema[k], 9), k))
    for k in order[:max(leftover, 0)]:
        base[k] += 1
    return [int(b) for b in base]


def to_frame_labels(h: ActivityHierarchy, level: int, horizon_frames: int | None = None) -> np.ndarray:
    """Per-frame labels of one level, expanded from relative durations."""
    T = h.total_frames
    coarse_spans = largest_remainder(h.coarse.durations, T)
    if level == COARSE:
        frames = np.repeat(h.coarse.labels, coarse_spans)
    else:
        pieces = []
        for i, span in enumerate(coarse_spans):
            kids = h.children(i)
            sub = largest_remainder([h.fine.segments[k].rel_duration for k in kids], span)
            pieces.append(np.repeat([h.fine.segments[k].label for k in kids], sub))
        frames = np.concatenate(pieces) if pieces else np.zeros(0, dtype=int)
    frames = frames.astype(int)
    if horizon_frames is not None:
        if horizon_frames > T:
            warnings.warn(f"horizon {horizon_frames} exceeds total_frames {T}; clipped", stacklevel=2)
        frames = frames[:horizon_frames]
    return frames


def intervals_to_frames(intervals: Sequence[tuple[int, float, float]], total_frames: int,
                        start_frame: int = 0, end_frame: int | None = None) -> np.ndarray:
    """Rasterise absolute-fraction intervals; boundaries round to the nearest frame."""
    end_frame = total_frames if end_frame is None else end_frame
    out = np.full(end_frame - start_frame, -1, dtype=int)
    for label, s, e in intervals:
        a = max(int(round(s * total_frames)), start_frame)
        b = min(int(round(e * total_frames)), end_frame)
        if b > a:
            out[a - start_frame:b - start_frame] = label
    if (out < 0).any():
        # gaps only come from rounding at the edges; extend the neighbour
        for k in range(out.size):
            if out[k] < 0:
                out[k] = out[k - 1] if k > 0 else next((x for x in out if x >= 0), -1)
    return out


def segments_from_frames(frames) -> list[tuple[int, int]]:
    """Maximal runs of equal labels as ``(label, length)``."""
    return [(int(label), sum(1 for _ in run)) for label, run in groupby(list(frames))]


def intervals_to_hierarchy(coarse_iv: Sequence[tuple[int, float, float]],
                           fine_iv: Sequence[tuple[int, float, float]],
                           task_id=0, total_frames: int = 1000) -> ActivityHierarchy:
    """Rebuild a hierarchy from absolute intervals tiling [0, 1].

    Fine intervals are cut at coarse boundaries, so inputs whose levels do not
    nest still produce a valid hierarchy.
    """
    c_segs = []
    for label, s, e in coarse_iv:
        if e - s > BOUNDARY_TOL:
            c_segs.append((label, s, e))
    total = sum(e - s for _, s, e in c_segs)
    f_out = []
    for i, (_, cs, ce) in enumerate(c_segs):
        span = ce - cs
        kids = []
        for label, s, e in fine_iv:
            lo, hi = max(s, cs), min(e, ce)
            if hi - lo > BOUNDARY_TOL:
                kids.append((label, hi - lo))
        if not kids:
            kids = [(fine_iv[-1][0] if fine_iv else 0, span)]
        ksum = sum(d for _, d in kids)
        f_out.extend((label, d / ksum, i) for label, d in kids)
    coarse = [(label, (e - s) / total) for label, s, e in c_segs]
    return make_hierarchy(coarse, f_out, task_id, total_frames)
