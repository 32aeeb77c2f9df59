#!/usr/bin/env python3
"""Evaluate a trained checkpoint under different inference memory lengths.

The temporal memory is a FIFO over recent frames; its inference length can
differ from the training length. This probe reports HOTA per length so the
sensitivity is visible (a robust model degrades little when the window
shrinks moderately).
"""

from __future__ import annotations

import argparse

from reftrack.harness import datafiles, experiments
from reftrack.harness.checkpoint import restore_model
from reftrack.harness.config import load_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--lengths", type=int, nargs="+", default=[8, 5])
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--allow-hash-mismatch", action="store_true")
    args = ap.parse_args()

    cfg = load_config(overrides=args.overrides, profile="desk")
    dataset = datafiles.load_dataset(args.data)
    model, vocab = restore_model(
        args.checkpoint, cfg, allow_hash_mismatch=args.allow_hash_mismatch
    )

    scores = experiments.memory_length_probe(
        model, vocab, dataset, cfg.thresholds, lengths=tuple(args.lengths)
    )
    for n in args.lengths:
        print(f"memory {n:2d} frames: HOTA {scores[n]:.4f}")
    if len(args.lengths) >= 2:
        a, b = args.lengths[0], args.lengths[1]
        print(f"drop {a}->{b}: {scores[a] - scores[b]:+.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
