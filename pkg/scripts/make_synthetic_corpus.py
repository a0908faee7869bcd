#!/usr/bin/env python3
"""Generate a planted-signal corpus file plus its manifest.

Examples:
    python scripts/make_synthetic_corpus.py --out runs/corpus-bin --mode adjacent-pair
    python scripts/make_synthetic_corpus.py --out runs/corpus-4c --num-classes 4 \
        --markers-per-class 4 --min-markers 3 --max-markers 3 --secondary-markers 1
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from attribkit.synthetic import SyntheticSpec, generate, write_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True)
    parser.add_argument("--mode", choices=["markers", "adjacent-pair"], default="markers")
    parser.add_argument("--num-docs", type=int, default=2000)
    parser.add_argument("--num-classes", type=int, default=2)
    parser.add_argument("--target-vocab", type=int, default=500)
    parser.add_argument("--markers-per-class", type=int, default=8)
    parser.add_argument("--min-markers", type=int, default=1)
    parser.add_argument("--max-markers", type=int, default=2)
    parser.add_argument("--secondary-markers", type=int, default=0)
    parser.add_argument("--min-len", type=int, default=18)
    parser.add_argument("--max-len", type=int, default=28)
    parser.add_argument("--pair-gap", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    args = parser.parse_args()

    spec = SyntheticSpec(
        mode=args.mode, num_docs=args.num_docs, num_classes=args.num_classes,
        target_vocab=args.target_vocab, markers_per_class=args.markers_per_class,
        min_markers=args.min_markers, max_markers=args.max_markers,
        secondary_markers=args.secondary_markers, min_len=args.min_len,
        max_len=args.max_len, pair_gap=args.pair_gap, seed=args.seed)
    rows, manifest = generate(spec)
    corpus_path, manifest_path = write_corpus(rows, manifest, args.out, fmt=args.format)
    print(f"wrote {len(rows)} documents ({manifest['distinct_tokens']} distinct tokens)")
    print(f"  corpus:   {corpus_path}")
    print(f"  manifest: {manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
