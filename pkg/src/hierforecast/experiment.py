"""Observe-p / predict-q evaluation and the cross-validated experiment harness.

For a video of ``T`` frames observed up to fraction ``p``, the evaluated span
is frames ``[round(p T), round(p T) + round(q T))`` clipped at ``T``.  Every
metric is computed per video on that span and then averaged over videos.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import build_model
from .checkpoint import load_model, save_model
from .data import Fold, Video, videos_for
from .errors import CheckpointError, ContractError
from .hierarchy import COARSE, FINE, intervals_to_frames, split_at, to_frame_labels
from .metrics import dedupe, f1_at_k, frames_to_segments, mof, moc, moc_counts, pooled_moc, segmental_edit_distance
from .model import LEVEL_NAMES, HeraConfig
from .training import fit

log = logging.getLogger(__name__)

METRICS = ("f1k", "moc", "mof", "edit")
DEFAULT_OBSERVE = (0.2, 0.3)
DEFAULT_HORIZONS = (0.1, 0.2, 0.3, 0.5, 0.7, 0.8)


def horizon_window(total_frames: int, observe: float, horizon: float) -> tuple[int, int]:
    start = int(round(observe * total_frames))
    end = min(total_frames, start + int(round(horizon * total_frames)))
    return start, end


def score_window(pred, gt, metric: str, k: float = 0.25) -> float:
    if metric == "f1k":
        return f1_at_k(frames_to_segments(pred), frames_to_segments(gt), k).f1
    if metric == "moc":
        return moc(pred, gt)
    if metric == "mof":
        return mof(pred, gt)
    if metric == "edit":
        return segmental_edit_distance(dedupe(pred.tolist()), dedupe(gt.tolist()))
    raise ContractError(f"unknown metric {metric!r}; expected one of {', '.join(METRICS)}")


@dataclass(frozen=True)
class VideoRow:
    fold: int
    video_id: str
    observe: float
    horizon: float
    level: str
    metric: str
    value: float


@dataclass
class Evaluation:
    rows: list[VideoRow] = field(default_factory=list)
    # (fold, observe, horizon, level) -> per-video MoC counts, for pooled MoC
    moc_counts: dict[tuple, list] = field(default_factory=dict)


def evaluate_model(model, videos: Sequence[Video], observe=DEFAULT_OBSERVE, horizons=DEFAULT_HORIZONS,
                   metrics=METRICS, k: float = 0.25, fold: int = 0, evaluation: Evaluation | None = None) -> Evaluation:
    for m in metrics:
        if m not in METRICS:
            raise ContractError(f"unknown metric {m!r}; expected one of {', '.join(METRICS)}")
    if not 0.0 < k < 1.0:
        raise ContractError(f"k must lie in (0, 1), got {k}")
    ev = evaluation or Evaluation()
    for video in videos:
        h = video.hierarchy
        T = h.total_frames
        gt_frames = [to_frame_labels(h, level) for level in (COARSE, FINE)]
        for p in observe:
            split = split_at(h, p)
            forecast = model.predict(split)
            for q in horizons:
                start, end = horizon_window(T, p, q)
                if end <= start:
                    continue
                for level, intervals in ((COARSE, forecast.coarse), (FINE, forecast.fine)):
                    gt = gt_frames[level][start:end]
                    pred = intervals_to_frames(intervals, T, start, end)
                    for m in metrics:
                        ev.rows.append(VideoRow(fold, video.video_id, p, q, LEVEL_NAMES[level], m,
                                                score_window(pred, gt, m, k)))
                    ev.moc_counts.setdefault((fold, p, q, LEVEL_NAMES[level]), []).append(moc_counts(pred, gt))
    return ev


@dataclass(frozen=True)
class SummaryRow:
    fold: int
    observe: float
    horizon: float
    level: str
    metric: str
    value: float
    videos: int


def summarize(ev: Evaluation) -> list[SummaryRow]:
    """Mean over videos per (fold, observe, horizon, level, metric), in a fixed order."""
    groups: dict[tuple, list[float]] = {}
    for r in ev.rows:
        groups.setdefault((r.fold, r.observe, r.horizon, r.level, r.metric), []).append(r.value)
    out = []
    for key in sorted(groups, key=lambda t: (t[0], t[1], t[2], LEVEL_NAMES.index(t[3]), METRICS.index(t[4]))):
        vals = [v for v in groups[key] if not math.isnan(v)]
        out.append(SummaryRow(*key, float(np.mean(vals)) if vals else float("nan"), len(vals)))
    return out


def moc_table(ev: Evaluation) -> list[tuple]:
    """Per (fold, observe, horizon, level): per-video mean MoC next to pooled MoC."""
    per_video = {}
    for r in ev.rows:
        if r.metric == "moc":
            per_video.setdefault((r.fold, r.observe, r.horizon, r.level), []).append(r.value)
    out = []
    for key in sorted(ev.moc_counts, key=lambda t: (t[0], t[1], t[2], LEVEL_NAMES.index(t[3]))):
        vals = per_video.get(key)
        mean = float(np.mean(vals)) if vals else float("nan")
        out.append(key + (mean, pooled_moc(ev.moc_counts[key])))
    return out


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def companion_paths(out: Path) -> tuple[Path, Path]:
    out = Path(out)
    return out.with_name(out.stem + "_videos.csv"), out.with_name(out.stem + "_moc.csv")


def write_results(out, ev: Evaluation) -> list[SummaryRow]:
    """Summary CSV at ``out`` plus ``*_videos.csv`` (per-video rows) and
    ``*_moc.csv`` (per-video vs pooled MoC)."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = summarize(ev)
    _write_csv(out, ["fold", "observe", "horizon", "level", "metric", "value", "videos"],
               [[s.fold, s.observe, s.horizon, s.level, s.metric, _fmt(s.value), s.videos] for s in summary])
    videos_path, moc_path = companion_paths(out)
    _write_csv(videos_path, ["fold", "video_id", "observe", "horizon", "level", "metric", "value"],
               [[r.fold, r.video_id, r.observe, r.horizon, r.level, r.metric, _fmt(r.value)] for r in ev.rows])
    _write_csv(moc_path, ["fold", "observe", "horizon", "level", "moc_per_video", "moc_pooled"],
               [list(t[:4]) + [_fmt(t[4]), _fmt(t[5])] for t in moc_table(ev)])
    return summary


@dataclass
class ExperimentConfig:
    model: str
    folds: list[Fold]
    observe: tuple[float, ...] = DEFAULT_OBSERVE
    horizons: tuple[float, ...] = DEFAULT_HORIZONS
    metrics: tuple[str, ...] = METRICS
    k: float = 0.25
    model_config: HeraConfig = field(default_factory=HeraConfig)
    checkpoint_dir: Path | None = None
    eval_only: bool = False
    out: Path | None = None


def fold_checkpoint(directory, fold: int) -> Path:
    return Path(directory) / f"fold{fold}.ckpt"


def run_experiment(cfg: ExperimentConfig, videos: Sequence[Video], vocab) -> tuple[Evaluation, list[SummaryRow]]:
    """Train (unless ``eval_only``) and evaluate one model per fold."""
    if cfg.eval_only and cfg.checkpoint_dir is None:
        raise CheckpointError("evaluation-only mode needs a checkpoint directory")
    n_c, n_f = len(vocab[0]), len(vocab[1])
    ev = Evaluation()
    for fold in cfg.folds:
        test = videos_for(videos, fold.test_persons)
        if cfg.eval_only:
            path = fold_checkpoint(cfg.checkpoint_dir, fold.index)
            if not path.exists():
                raise CheckpointError(f"missing checkpoint {path}")
            model = load_model(path)
        else:
            model = build_model(cfg.model, n_c, n_f, cfg.model_config, (list(vocab[0]), list(vocab[1])))
            train = [v.hierarchy for v in videos_for(videos, fold.train_persons)]
            val = [v.hierarchy for v in videos_for(videos, [fold.validation_person])] if fold.validation_person else []
            history = fit(model, train, val)
            log.info("fold %d: best epoch %d, val %.5f", fold.index, history.best_epoch, history.best_val)
            if cfg.checkpoint_dir is not None:
                Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_model(model, fold_checkpoint(cfg.checkpoint_dir, fold.index))
        evaluate_model(model, test, cfg.observe, cfg.horizons, cfg.metrics, cfg.k, fold.index, ev)
    summary = write_results(cfg.out, ev) if cfg.out is not None else summarize(ev)
    return ev, summary


def read_summary(path) -> list[SummaryRow]:
    with Path(path).open(encoding="utf-8") as fh:
        return [SummaryRow(int(r["fold"]), float(r["observe"]), float(r["horizon"]), r["level"], r["metric"],
                           float(r["value"]), int(r["videos"])) for r in csv.DictReader(fh)]


def report_table(rows: Sequence[SummaryRow], metric: str = "f1k") -> str:
    """Fold-averaged table: one line per (level, observe), one column per horizon, in percent."""
    horizons = sorted({r.horizon for r in rows})
    cells: dict[tuple, list[float]] = {}
    for r in rows:
        if r.metric == metric and not math.isnan(r.value):
            cells.setdefault((r.level, r.observe, r.horizon), []).append(r.value)
    lines = [f"{metric:<18}" + "".join(f"{int(round(q * 100)):>8}%" for q in horizons)]
    for level in LEVEL_NAMES:
        for p in sorted({r.observe for r in rows}):
            vals = [cells.get((level, p, q)) for q in horizons]
            if not any(vals):
                continue
            label = f"{level} obs {int(round(p * 100))}%"
            lines.append(f"{label:<18}" + "".join(f"{100 * np.mean(v):>9.1f}" if v else f"{'-':>9}" for v in vals))
    return "\n".join(lines)
