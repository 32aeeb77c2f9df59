"""Command-line entry points.

Subcommands cover the full loop: synthetic data generation, the language
item pipeline (propagate / generate / expand / stats), training, evaluation,
and a quick loss-curve plot. Exit codes: 0 success, 2 configuration errors
(argparse shares this code), 3 data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from reftrack.harness import datafiles, experiments
from reftrack.harness.checkpoint import restore_model
from reftrack.harness.config import RunConfig, config_hash, config_to_dict, load_config
from reftrack.harness.errors import ConfigError, DataError


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument(
        "--profile", default="desk", help="base profile when no YAML is given"
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. --set train.steps=100",
    )


def _load_cfg(args) -> RunConfig:
    return load_config(
        path=args.config, profile=args.profile, overrides=list(args.overrides)
    )


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    out = datafiles.resolve_data_root(args.out)
    if args.kind == "standard":
        videos = experiments.build_training_videos(
            n_videos=args.videos,
            frames=args.frames,
            expressions_per_video=args.expressions_per_video,
            seed=args.seed,
        )
    else:
        videos = experiments.build_occlusion_videos(
            n_videos=args.videos,
            frames=args.frames,
            seed=args.seed,
            expressions_per_video=args.expressions_per_video,
        )
    datafiles.save_dataset(videos, out)
    n_expr = sum(len(v.expressions) for v in videos)
    print(f"wrote {len(videos)} videos / {n_expr} expressions to {out}")
    return 0


# ---------------------------------------------------------------------------
# pipeline


def cmd_pipeline_propagate(args) -> int:
    items_by_video = datafiles.read_items_file(args.items)
    image_size = (args.image_size[0], args.image_size[1])
    from reftrack.pipeline import propagate_items

    out = {}
    for video, items in sorted(items_by_video.items()):
        label_path = Path(args.labels_dir) / f"{video}.txt"
        tracks = datafiles.read_track_file(label_path, image_size)
        kept, warnings = propagate_items(items, tracks)
        out[video] = kept
        for w in warnings:
            print(f"{video}: {w}", file=sys.stderr)
    datafiles.write_items_file(args.out, out)
    print(f"wrote propagated items for {len(out)} videos to {args.out}")
    return 0


def cmd_pipeline_generate(args) -> int:
    from reftrack.pipeline import generate_expressions, propagate_items

    root = datafiles.resolve_data_root(args.data)
    dataset = datafiles.load_dataset(root)
    items_by_video = datafiles.read_items_file(root / "items.txt")
    total = 0
    for vid in sorted(dataset.videos):
        video = dataset.videos[vid]
        items, warnings = propagate_items(items_by_video.get(vid, []), video.tracks)
        for w in warnings:
            print(f"{vid}: {w}", file=sys.stderr)
        exprs = generate_expressions(items, min_support=args.min_support)
        expr_dir = root / "expressions" / vid
        if expr_dir.exists():
            for old in expr_dir.glob("*.json"):
                old.unlink()
        for idx, expr in enumerate(exprs):
            datafiles.write_expression_file(expr_dir / f"{idx:04d}.json", vid, expr)
        total += len(exprs)
    print(f"generated {total} expressions under {root / 'expressions'}")
    return 0


def cmd_pipeline_expand(args) -> int:
    from reftrack.pipeline import (
        HttpParaphraseProvider,
        MockParaphraseProvider,
        expand_expressions,
    )

    root = datafiles.resolve_data_root(args.data)
    dataset = datafiles.load_dataset(root)
    if args.provider == "mock":
        provider = MockParaphraseProvider()
    else:
        if not args.endpoint:
            raise ConfigError("--endpoint is required with --provider http")
        provider = HttpParaphraseProvider(args.endpoint)
    review = {}
    if args.review:
        payload = datafiles.read_json(args.review)
        if not isinstance(payload, dict):
            raise DataError(f"review file must map text -> bool: {args.review}")
        review = {str(k): bool(v) for k, v in payload.items()}

    all_records = []
    added = 0
    for vid in sorted(dataset.videos):
        video = dataset.videos[vid]
        originals = [e for _, e in video.expressions]
        expanded, records = expand_expressions(
            originals, provider, count=args.count, review=review
        )
        all_records.extend({"video": vid, **r} for r in records)
        new = expanded[len(originals) :]
        start = len(video.expressions)
        for offset, expr in enumerate(new):
            datafiles.write_expression_file(
                root / "expressions" / vid / f"{start + offset:04d}.json", vid, expr
            )
        added += len(new)
    if args.records:
        datafiles.atomic_write(
            args.records,
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in all_records),
        )
    print(f"accepted {added} paraphrases ({len(all_records)} records)")
    return 0


def cmd_pipeline_stats(args) -> int:
    from reftrack.pipeline import compute_statistics

    root = datafiles.resolve_data_root(args.root)
    exprs, objects = datafiles.load_expression_corpus(root)
    report = compute_statistics(exprs, objects)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        datafiles.atomic_write(args.out, payload + "\n")
        print(f"wrote statistics to {args.out}")
    else:
        print(payload)
    return 0


# ---------------------------------------------------------------------------
# train / eval / plot


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.steps is not None:
        from dataclasses import replace

        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    root = datafiles.resolve_data_root(args.data)
    dataset = datafiles.load_dataset(root)
    out = Path(args.out)
    art = experiments.train_on_dataset(
        cfg, dataset, out_dir=out, quiet=args.quiet
    )
    print(f"trained {cfg.train.steps} steps; checkpoint at {art.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    root = datafiles.resolve_data_root(args.data)
    dataset = datafiles.load_dataset(root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.predictions_dir:
        per_case, overall = experiments.evaluate_prediction_files(
            dataset, args.predictions_dir, cfg.thresholds
        )
    elif args.checkpoint:
        model, vocab = restore_model(
            args.checkpoint, cfg, allow_hash_mismatch=args.allow_hash_mismatch
        )
        per_case, overall, preds = experiments.evaluate_model(
            model, vocab, dataset, cfg.thresholds, memory_frames=args.memory_frames
        )
        if args.write_predictions:
            experiments.write_predictions(out / "predictions", preds, dataset.image_size)
    else:
        raise ConfigError("eval needs either --checkpoint or --predictions-dir")

    datafiles.write_metric_report(out / "report.csv", per_case, overall)
    datafiles.write_json(
        out / "manifest.json",
        {
            "command": "eval",
            "config": config_to_dict(cfg),
            "config_hash": config_hash(cfg),
            "dataset": str(root),
            "checkpoint": args.checkpoint,
            "predictions_dir": args.predictions_dir,
            "memory_frames": args.memory_frames,
            "overall": overall.as_row(),
        },
    )
    print(f"HOTA {overall.hota:.4f}  DetA {overall.deta:.4f}  AssA {overall.assa:.4f}")
    print(f"wrote report to {out / 'report.csv'}")
    return 0


def cmd_plot(args) -> int:
    entries = datafiles.read_loss_log(args.log)
    if not entries:
        raise DataError(f"loss log is empty: {args.log}")
    steps = [e["step"] for e in entries]
    totals = [e["total"] for e in entries]
    width, height = args.width, args.height
    lo, hi = min(totals), max(totals)
    span = (hi - lo) or 1.0
    cols = []
    for c in range(width):
        a = int(c * len(totals) / width)
        b = max(a + 1, int((c + 1) * len(totals) / width))
        chunk = totals[a:b]
        cols.append(sum(chunk) / len(chunk))
    grid = [[" "] * width for _ in range(height)]
    for c, v in enumerate(cols):
        r = int((v - lo) / span * (height - 1))
        grid[height - 1 - r][c] = "*"
    print(f"loss  max {hi:.4f}")
    for row in grid:
        print("|" + "".join(row))
    print("+" + "-" * width + f"  min {lo:.4f}")
    print(f"steps {steps[0]}..{steps[-1]}  ({len(entries)} entries)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reftrack",
        description="Language-conditioned multi-object tracking on synthetic video.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("standard", "occlusion"), default="standard")
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--expressions-per-video", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    pl = sub.add_parser("pipeline", help="language item pipeline")
    plsub = pl.add_subparsers(dest="pipeline_command", required=True)

    p = plsub.add_parser("propagate", help="trim item spans to track visibility")
    p.add_argument("--items", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--image-size", type=int, nargs=2, required=True, metavar=("H", "W"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline_propagate)

    p = plsub.add_parser("generate", help="rebuild template expressions for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--min-support", type=int, default=10)
    p.set_defaults(func=cmd_pipeline_generate)

    p = plsub.add_parser("expand", help="add accepted paraphrases to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--provider", choices=("mock", "http"), default="mock")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--review", default=None, help="JSON file mapping text -> accept")
    p.add_argument("--records", default=None, help="JSONL audit trail output")
    p.set_defaults(func=cmd_pipeline_expand)

    p = plsub.add_parser("stats", help="corpus statistics (native or foreign layout)")
    p.add_argument("--root", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pipeline_stats)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or prediction files")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--predictions-dir", default=None)
    p.add_argument("--memory-frames", type=int, default=None)
    p.add_argument("--allow-hash-mismatch", action="store_true")
    p.add_argument("--write-predictions", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="ASCII plot of a loss log")
    p.add_argument("--log", required=True)
    p.add_argument("--width", type=int, default=70)
    p.add_argument("--height", type=int, default=12)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
