"""Command line entry point: ``hierforecast {synth,train,predict,evaluate,report}``.

Exit status is 0 on success and 2 when inputs fail validation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .baselines import MODEL_KINDS, build_model
from .checkpoint import load_model, save_model
from .data import (DATA_DIR_ENV, default_data_dir, hierarchy_to_record, load_videos, make_cv_splits,
                   parse_annotations, videos_for, write_annotations, Vocabulary)
from .errors import HierForecastError, NumericError
from .experiment import (DEFAULT_HORIZONS, DEFAULT_OBSERVE, METRICS, ExperimentConfig, evaluate_model,
                         fold_checkpoint, read_summary, report_table, write_results, Evaluation)
from .hierarchy import split_at
from .model import HeraConfig
from .synth import coffee_grammar, default_grammar, fixed_duration_grammar, synth_generate
from .training import fit

log = logging.getLogger("hierforecast")

GRAMMARS = {"default": default_grammar, "coffee": coffee_grammar, "fixed": fixed_duration_grammar}


def _fractions(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated fractions, got {text!r}") from None
    if not vals or any(not 0.0 < v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError(f"fractions must lie in (0, 1), got {text!r}")
    return vals


def _k(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"--k must lie in (0, 1), got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_data(p):
    p.add_argument("--data", type=Path, help=f"annotation file or directory (default: ${DATA_DIR_ENV})")
    p.add_argument("--format", choices=("canonical", "breakfast"), default="canonical")


def _add_model(p):
    p.add_argument("--model", choices=MODEL_KINDS, default="hera")
    p.add_argument("--folds", type=_positive, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_positive)
    p.add_argument("--batch-size", type=_positive)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden-size", type=_positive)
    p.add_argument("--splits-per-video", type=_positive)
    p.add_argument("--no-messages", action="store_true", help="disable cross-level messages")


def _add_eval(p):
    p.add_argument("--observe", type=_fractions, default=DEFAULT_OBSERVE)
    p.add_argument("--horizons", type=_fractions, default=DEFAULT_HORIZONS)
    p.add_argument("--metric", choices=METRICS, action="append")
    p.add_argument("--k", type=_k, default=0.25)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierforecast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic annotations in canonical format")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=_positive, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--persons", type=_positive, default=8)
    p.add_argument("--grammar", choices=sorted(GRAMMARS), default="default")

    p = sub.add_parser("train", help="train one model per cross-validation fold")
    _add_data(p)
    _add_model(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="directory for fold<k>.ckpt files")

    p = sub.add_parser("evaluate", help="score saved (or training-free) models on each fold's test persons")
    _add_data(p)
    _add_model(p)
    _add_eval(p)
    p.add_argument("--checkpoint", type=Path, help="directory holding fold<k>.ckpt files")
    p.add_argument("--out", type=Path, required=True, help="summary CSV")

    p = sub.add_parser("predict", help="forecast the rest of each video from a checkpoint")
    _add_data(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="a .ckpt file")
    p.add_argument("--observe", type=_fractions, default=(0.2,))
    p.add_argument("--video", action="append", help="restrict to these video ids")
    p.add_argument("--out", type=Path, help="JSON lines output (default: stdout)")

    p = sub.add_parser("report", help="fold-averaged table from a summary CSV")
    p.add_argument("results", type=Path)
    p.add_argument("--metric", choices=METRICS, default="f1k")
    return parser


class UsageError(HierForecastError):
    pass


def _load(args):
    path = args.data or default_data_dir()
    if path is None:
        raise UsageError(f"no --data given and ${DATA_DIR_ENV} is not set")
    if args.format == "canonical" and path.is_dir():
        path = path / "annotations.jsonl"
    parsed = parse_annotations(path, args.format)
    for line, vid, reason in parsed.rejected:
        log.warning("skipped %s (line %d): %s", vid, line, reason)
    if not parsed.records:
        raise UsageError(f"{path}: no usable annotation records")
    return parsed, load_videos(parsed)


def _model_config(args) -> HeraConfig:
    overrides = {"seed": args.seed}
    for name in ("epochs", "batch_size", "lr", "hidden_size", "splits_per_video"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.no_messages:
        overrides["cross_level_messages"] = False
    return HeraConfig(**overrides)


def cmd_synth(args) -> int:
    grammar = GRAMMARS[args.grammar]()
    hs = synth_generate(grammar, args.n, args.seed)
    cv, fv = Vocabulary(grammar.coarse_vocab), Vocabulary(grammar.fine_vocab)
    width = len(str(args.n - 1))
    records = [hierarchy_to_record(h, f"synth_{i:0{width}d}_{h.task_id}", f"P{i % args.persons:02d}", cv, fv)
               for i, h in enumerate(hs)]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_annotations(args.out, records)
    print(f"wrote {len(records)} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    parsed, videos = _load(args)
    folds = make_cv_splits(parsed.records, args.folds, args.seed)
    vocab = (list(parsed.coarse_vocab.labels), list(parsed.fine_vocab.labels))
    args.checkpoint.mkdir(parents=True, exist_ok=True)
    for fold in folds:
        model = build_model(args.model, len(vocab[0]), len(vocab[1]), _model_config(args), vocab)
        train = [v.hierarchy for v in videos_for(videos, fold.train_persons)]
        val = [v.hierarchy for v in videos_for(videos, [fold.validation_person])] if fold.validation_person else []
        history = fit(model, train, val)
        path = fold_checkpoint(args.checkpoint, fold.index)
        save_model(model, path)
        print(f"fold {fold.index}: {len(train)} train videos, best epoch {history.best_epoch}, -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    parsed, videos = _load(args)
    folds = make_cv_splits(parsed.records, args.folds, args.seed)
    vocab = (list(parsed.coarse_vocab.labels), list(parsed.fine_vocab.labels))
    metrics = tuple(args.metric) if args.metric else METRICS
    ev = Evaluation()
    for fold in folds:
        if args.checkpoint is not None:
            path = fold_checkpoint(args.checkpoint, fold.index)
            if not path.exists():
                raise UsageError(f"missing checkpoint {path}")
            model = load_model(path)
        elif args.model == "dummy":
            model = build_model("dummy", len(vocab[0]), len(vocab[1]), _model_config(args), vocab)
        else:
            raise UsageError(f"--model {args.model} needs --checkpoint (run 'train' first)")
        evaluate_model(model, videos_for(videos, fold.test_persons), args.observe, args.horizons,
                       metrics, args.k, fold.index, ev)
    summary = write_results(args.out, ev)
    print(report_table(summary, metrics[0]))
    print(f"wrote {len(summary)} summary rows to {args.out}")
    return 0


def cmd_predict(args) -> int:
    parsed, videos = _load(args)
    model = load_model(args.checkpoint)
    cv = Vocabulary(model.vocab[0]) if model.vocab else parsed.coarse_vocab
    fv = Vocabulary(model.vocab[1]) if model.vocab else parsed.fine_vocab
    if (list(cv.labels), list(fv.labels)) != (list(parsed.coarse_vocab.labels), list(parsed.fine_vocab.labels)):
        raise UsageError("the data's label vocabulary differs from the checkpoint's")
    wanted = set(args.video or [])
    lines = []
    for v in videos:
        if wanted and v.video_id not in wanted:
            continue
        T = v.hierarchy.total_frames
        for p in args.observe:
            fc = model.predict(split_at(v.hierarchy, p))
            lines.append(json.dumps({
                "video_id": v.video_id, "observe": p,
                "coarse": [[cv.label(l), round(s * T), round(e * T)] for l, s, e in fc.coarse],
                "fine": [[fv.label(l), round(s * T), round(e * T)] for l, s, e in fc.fine],
                "truncated": fc.truncated}))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    if not args.results.exists():
        raise UsageError(f"{args.results} does not exist")
    print(report_table(read_summary(args.results), args.metric))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HierForecastError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
