"""Annotation files, vocabularies and leave-persons-out cross-validation folds.

Canonical format: one JSON object per line, one line per video::

    {"video_id": "P03_cereals", "person_id": "P03", "task": "cereals", "total_frames": 812,
     "coarse": [["take_bowl", 0, 200], ...],
     "fine": [["take_bowl", 0, 120, 0], ...]}

Intervals are half-open frame ranges ``[start, end)``.  Coarse intervals tile
``[0, total_frames)``; the children of each coarse activity (the last field of
a fine entry is the parent's index) tile their parent.  Relative durations are
derived from frames when a record becomes a hierarchy and are never stored.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AnnotationError, ContractError, VocabularyError
from .hierarchy import ActivityHierarchy, largest_remainder, make_hierarchy

log = logging.getLogger(__name__)

DATA_DIR_ENV = "HIERFORECAST_DATA"


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    person_id: str
    task_label: str
    total_frames: int
    coarse: tuple[tuple[str, int, int], ...]
    fine: tuple[tuple[str, int, int, int], ...]


class Vocabulary:
    """Sorted label strings <-> class ids."""

    def __init__(self, labels: Iterable[str] = ()):
        self.labels = tuple(sorted(set(labels)))
        self._index = {label: k for k, label in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.labels == other.labels

    def __repr__(self):
        return f"Vocabulary({list(self.labels)!r})"

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(f"label {label!r} is not in the vocabulary") from None

    def label(self, index: int) -> str:
        if not 0 <= index < len(self.labels):
            raise VocabularyError(f"class id {index} outside vocabulary of size {len(self.labels)}")
        return self.labels[index]


@dataclass
class ParsedAnnotations:
    records: list[AnnotationRecord]
    coarse_vocab: Vocabulary
    fine_vocab: Vocabulary
    rejected: list[tuple[int, str, str]] = field(default_factory=list)  # (line, video_id, reason)

    def counts(self) -> dict[str, int]:
        return {"videos": len(self.records),
                "coarse_segments": sum(len(r.coarse) for r in self.records),
                "fine_segments": sum(len(r.fine) for r in self.records),
                "coarse_labels": len(self.coarse_vocab),
                "fine_labels": len(self.fine_vocab)}


# ---------------------------------------------------------------------------
# record checks

def record_problems(rec: AnnotationRecord) -> list[str]:
    """Reasons a record cannot become a valid hierarchy (empty when fine)."""
    problems = []
    T = rec.total_frames
    if T <= 0:
        return [f"total_frames must be positive, got {T}"]
    if not rec.coarse:
        return ["no coarse segments"]
    cursor = 0
    for i, (label, s, e) in enumerate(rec.coarse):
        if e <= s:
            problems.append(f"coarse segment {i} ({label}) is empty: [{s}, {e})")
        if s != cursor:
            problems.append(f"coarse segment {i} starts at {s}, expected {cursor}")
        cursor = e
    if cursor != T:
        problems.append(f"coarse segments end at {cursor}, expected total_frames {T}")
    kids: dict[int, list[tuple[int, int]]] = {}
    last_parent = -1
    for k, (label, s, e, p) in enumerate(rec.fine):
        if not 0 <= p < len(rec.coarse):
            problems.append(f"fine segment {k} ({label}) names missing parent {p}")
            continue
        if p < last_parent:
            problems.append(f"fine segment {k} ({label}) is out of order")
        last_parent = p
        _, ps, pe = rec.coarse[p]
        if e <= s:
            problems.append(f"fine segment {k} ({label}) is empty: [{s}, {e})")
        if s < ps or e > pe:
            problems.append(f"fine segment {k} ({label}) [{s}, {e}) is not nested in parent {p} [{ps}, {pe})")
        kids.setdefault(p, []).append((s, e))
    for p, (label, ps, pe) in enumerate(rec.coarse):
        spans = kids.get(p)
        if not spans:
            problems.append(f"coarse segment {p} ({label}) has no fine children")
            continue
        cursor = ps
        for s, e in spans:
            if s != cursor:
                problems.append(f"children of coarse segment {p} leave a gap or overlap at frame {s}")
                break
            cursor = e
        else:
            if cursor != pe:
                problems.append(f"children of coarse segment {p} end at {cursor}, parent ends at {pe}")
    return problems


# ---------------------------------------------------------------------------
# canonical JSONL

_FIELDS = ("video_id", "person_id", "task", "total_frames", "coarse", "fine")


def _record_from_obj(obj) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise ValueError("a record must be a JSON object")
    missing = [f for f in _FIELDS if f not in obj]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    coarse = tuple((str(l), int(s), int(e)) for l, s, e in obj["coarse"])
    fine = tuple((str(l), int(s), int(e), int(p)) for l, s, e, p in obj["fine"])
    return AnnotationRecord(str(obj["video_id"]), str(obj["person_id"]), str(obj["task"]),
                            int(obj["total_frames"]), coarse, fine)


def _finish(records_with_lines, rejected) -> ParsedAnnotations:
    accepted = []
    for line, rec in records_with_lines:
        problems = record_problems(rec)
        if problems:
            rejected.append((line, rec.video_id, problems[0]))
            log.warning("rejected %s (line %d): %s", rec.video_id, line, problems[0])
            continue
        accepted.append(rec)
    coarse_vocab = Vocabulary(l for r in accepted for l, _, _ in r.coarse)
    fine_vocab = Vocabulary(l for r in accepted for l, _, _, _ in r.fine)
    return ParsedAnnotations(accepted, coarse_vocab, fine_vocab, rejected)


def parse_annotations(path, fmt: str = "canonical") -> ParsedAnnotations:
    """Read annotations; malformed lines raise, structurally bad records are
    rejected with a reason and skipped."""
    if fmt == "breakfast":
        return parse_breakfast(path)
    if fmt != "canonical":
        raise ContractError(f"unknown annotation format {fmt!r}")
    path = Path(path)
    if not path.exists():
        raise AnnotationError(f"annotation file {path} does not exist")
    pending = []
    with path.open("r", encoding="utf-8") as fh:
        for n, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                pending.append((n, _record_from_obj(json.loads(text))))
            except (ValueError, TypeError) as exc:
                raise AnnotationError(f"{path}: malformed record: {exc}", n) from None
    return _finish(pending, [])


def record_to_json(rec: AnnotationRecord) -> str:
    obj = {"video_id": rec.video_id, "person_id": rec.person_id, "task": rec.task_label,
           "total_frames": rec.total_frames,
           "coarse": [list(c) for c in rec.coarse], "fine": [list(f) for f in rec.fine]}
    return json.dumps(obj, separators=(", ", ": "))


def write_annotations(path, records: Sequence[AnnotationRecord]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


# ---------------------------------------------------------------------------
# Breakfast-style directory layout

_RANGE = re.compile(r"^\s*(\d+)\s*[-\s]\s*(\d+)\s+(\S+)\s*$")


def _read_segments(path: Path) -> list[tuple[str, int, int]]:
    out = []
    for n, text in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not text.strip():
            continue
        m = _RANGE.match(text)
        if m is None:
            raise AnnotationError(f"{path}: expected '<start>-<end> <label>'", n)
        start, end = int(m.group(1)), int(m.group(2))
        # 1-based inclusive frame ranges -> half-open, 0-based
        out.append((m.group(3), start - 1, end))
    return out


def parse_breakfast(root) -> ParsedAnnotations:
    """Convert a directory with ``coarse/<video>.txt`` and ``fine/<video>.txt``
    segment files (lines ``<start>-<end> <label>``, 1-based inclusive frames).

    The person id is the first ``P<digits>`` token of the video name and the
    task is its last ``_``-separated token.  Fine segments are attached to the
    coarse segment that contains them.
    """
    root = Path(root)
    cdir, fdir = root / "coarse", root / "fine"
    if not cdir.is_dir() or not fdir.is_dir():
        raise AnnotationError(f"{root}: expected 'coarse' and 'fine' subdirectories")
    pending = []
    rejected = []
    for n, cpath in enumerate(sorted(cdir.glob("*.txt")), 1):
        vid = cpath.stem
        fpath = fdir / cpath.name
        if not fpath.exists():
            rejected.append((n, vid, "no fine annotation file"))
            continue
        coarse = _read_segments(cpath)
        fine_raw = _read_segments(fpath)
        person = re.search(r"P\d+", vid)
        fine = []
        for label, s, e in fine_raw:
            parent = next((i for i, (_, cs, ce) in enumerate(coarse) if cs <= s and e <= ce), -1)
            fine.append((label, s, e, parent))
        total = coarse[-1][2] if coarse else 0
        rec = AnnotationRecord(vid, person.group(0) if person else vid, vid.split("_")[-1], total,
                               tuple(coarse), tuple(fine))
        pending.append((n, rec))
    return _finish(pending, rejected)


# ---------------------------------------------------------------------------
# records <-> hierarchies

@dataclass(frozen=True)
class Video:
    video_id: str
    person_id: str
    hierarchy: ActivityHierarchy


def record_to_hierarchy(rec: AnnotationRecord, coarse_vocab: Vocabulary, fine_vocab: Vocabulary) -> ActivityHierarchy:
    coarse = [(coarse_vocab.index(l), (e - s) / rec.total_frames) for l, s, e in rec.coarse]
    fine = []
    for label, s, e, p in rec.fine:
        _, ps, pe = rec.coarse[p]
        fine.append((fine_vocab.index(label), (e - s) / (pe - ps), p))
    return make_hierarchy(coarse, fine, task_id=rec.task_label, total_frames=rec.total_frames)


def hierarchy_to_record(h: ActivityHierarchy, video_id: str, person_id: str,
                        coarse_vocab: Vocabulary, fine_vocab: Vocabulary) -> AnnotationRecord:
    """Frame intervals by largest-remainder rounding, the same as frame expansion."""
    T = h.total_frames
    coarse, fine = [], []
    cursor = 0
    for i, (seg, span) in enumerate(zip(h.coarse.segments, largest_remainder(h.coarse.durations, T))):
        coarse.append((coarse_vocab.label(seg.label), cursor, cursor + span))
        kids = h.children(i)
        sub = largest_remainder([h.fine.segments[k].rel_duration for k in kids], span)
        c2 = cursor
        for k, n in zip(kids, sub):
            fine.append((fine_vocab.label(h.fine.segments[k].label), c2, c2 + n, i))
            c2 += n
        cursor += span
    rec = AnnotationRecord(video_id, person_id, str(h.task_id), T, tuple(coarse), tuple(fine))
    problems = record_problems(rec)
    if problems:
        raise ContractError(f"{video_id}: hierarchy does not survive frame rounding: {problems[0]}")
    return rec


def load_videos(parsed: ParsedAnnotations) -> list[Video]:
    return [Video(r.video_id, r.person_id, record_to_hierarchy(r, parsed.coarse_vocab, parsed.fine_vocab))
            for r in parsed.records]


# ---------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class Fold:
    index: int
    train_persons: tuple[str, ...]
    validation_person: str | None
    test_persons: tuple[str, ...]


def make_cv_splits(records, n_folds: int = 4, seed: int = 0) -> list[Fold]:
    """Leave-persons-out folds.

    Persons are shuffled by ``seed`` and cut into ``n_folds`` near-equal test
    groups.  In each fold the first remaining person in shuffled order is held
    out for validation (none when only one training person is left).
    """
    persons = sorted({r if isinstance(r, str) else r.person_id for r in records})
    if n_folds < 2:
        raise ContractError(f"make_cv_splits needs at least 2 folds, got {n_folds}")
    if len(persons) < n_folds:
        raise ContractError(f"make_cv_splits: {len(persons)} persons cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    shuffled = [persons[k] for k in rng.permutation(len(persons))]
    groups = np.array_split(np.arange(len(shuffled)), n_folds)
    folds = []
    for f, idx in enumerate(groups):
        test = set(int(k) for k in idx)
        rest = [shuffled[k] for k in range(len(shuffled)) if k not in test]
        val = rest[0] if len(rest) > 1 else None
        train = tuple(sorted(rest[1:] if val is not None else rest))
        folds.append(Fold(f, train, val, tuple(sorted(shuffled[k] for k in test))))
    return folds


def videos_for(videos: Sequence[Video], persons) -> list[Video]:
    wanted = set(persons)
    return [v for v in videos if v.person_id in wanted]
