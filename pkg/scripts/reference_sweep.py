#!/usr/bin/env python3
"""Full-scale epsilon sweep for comparing against externally published numbers.

Not part of the test suite: it needs a user-supplied pretrained model, its
weights, and a labeled manifest (for example an ImageNet validation split
converted to PPM). Emits the accuracy / loss / load-reduction table for
epsilon 0.0 through 0.5 in steps of 0.1.

Usage:
    python scripts/reference_sweep.py --model mobilenet.cfg \
        --weights mobilenet.weights --manifest val.tsv --names names.txt \
        --out sweep.json
"""

import argparse
import sys

from fmprune import (
    epsilon_sweep, fold_batch_norm, load_class_names, load_manifest,
    load_weights, parse_config,
)

EPSILONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True)
    parser.add_argument("--weights", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--names")
    parser.add_argument("--out", help="also write the full JSON report here")
    args = parser.parse_args(argv)

    with open(args.model) as f:
        model = parse_config(f.read())
    with open(args.weights, "rb") as f:
        model = load_weights(f.read(), model)
    model = fold_batch_norm(model)
    names = load_class_names(args.names) if args.names else None
    manifest = load_manifest(args.manifest, class_names=names)

    result = epsilon_sweep(model, manifest, EPSILONS)
    print(f"baseline: top-1 {result.baseline_top1:.3%}  top-5 {result.baseline_top5:.3%}")
    print(f"{'epsilon':>8} {'top1_loss':>10} {'top5_loss':>10} {'reduce':>8}")
    for row in result.rows:
        print(f"{row.epsilon:>8.1f} {row.top1_loss:>10.3%} {row.top5_loss:>10.3%} "
              f"{row.load_reduction:>8.3%}")
    if args.out:
        result.to_json(args.out)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
