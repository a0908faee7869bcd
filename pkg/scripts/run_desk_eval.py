#!/usr/bin/env python3
"""End-to-end desk-scale experiment driver.

Generates the two planted-signal corpora, trains a binary and a 4-class model,
and runs every evaluation protocol through the CLI, leaving all artifacts
under one output directory:

    python scripts/run_desk_eval.py --out runs/desk
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from attribkit.cli import main as cli
from attribkit.synthetic import SyntheticSpec, generate, write_corpus


def run(argv: list[str]) -> None:
    print("+ attribkit " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()
    out = Path(args.out)

    # binary corpus: class = whether the marker pair is adjacent
    spec2 = SyntheticSpec(mode="adjacent-pair", num_docs=2000, seed=args.seed)
    rows, manifest = generate(spec2)
    corpus2_csv, _ = write_corpus(rows, manifest, out / "raw-bin")
    # 4-class corpus: three own-class markers plus one marker of each other class
    spec4 = SyntheticSpec(mode="markers", num_docs=2000, num_classes=4,
                          markers_per_class=4, min_markers=3, max_markers=3,
                          secondary_markers=3, seed=args.seed)
    rows4, manifest4 = generate(spec4)
    corpus4_csv, _ = write_corpus(rows4, manifest4, out / "raw-4c")

    run(["ingest", "--input", str(corpus2_csv), "--out", str(out / "corpus-bin"),
         "--seq-len", "30", "--max-size", "500", "--seed", "3"])
    run(["train", "--corpus", str(out / "corpus-bin"), "--out", str(out / "model-bin"),
         "--filters", "8", "--epochs", "10", "--learning-rate", "0.5",
         "--no-bias", "--seed", "5"])
    run(["ingest", "--input", str(corpus4_csv), "--out", str(out / "corpus-4c"),
         "--seq-len", "30", "--max-size", "500", "--seed", "3"])
    run(["train", "--corpus", str(out / "corpus-4c"), "--out", str(out / "model-4c"),
         "--filters", "16", "--epochs", "15", "--learning-rate", "0.5",
         "--no-bias", "--seed", "5"])

    bin_model = str(out / "model-bin" / "params.atpr")
    run(["attribute", "--corpus", str(out / "corpus-bin"), "--params", bin_model,
         "--doc-ids", "0,1,2,3", "--method", "lrp", "--out", str(out / "attributions")])
    run(["eval-words", "--corpus", str(out / "corpus-bin"), "--params", bin_model,
         "--out", str(out / "eval-words")])
    run(["eval-columns", "--corpus", str(out / "corpus-bin"), "--params", bin_model,
         "--class-filter", "1", "--counts", "0,8,16,24", "--out", str(out / "eval-columns")])
    run(["eval-filters", "--corpus", str(out / "corpus-bin"), "--params", bin_model,
         "--class-filter", "1", "--counts", "0,2,4,6", "--out", str(out / "eval-filters")])
    run(["steer", "--corpus", str(out / "corpus-4c"),
         "--params", str(out / "model-4c" / "params.atpr"),
         "--actual-class", "0", "--other-classes", "2,3",
         "--counts", "0,8,16,24", "--out", str(out / "steer")])
    print(f"\nall artifacts under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
