"""Planted-signal corpus generators.

Two document families with known ground-truth relevance structure:

* ``markers``: each document is random filler with a few class-marker tokens
  planted in it (optionally plus "secondary" markers of one other class, which
  give every document weak off-class evidence for steering experiments);
* ``adjacent-pair``: binary corpus where both classes contain the same two
  marker tokens, and only their adjacency decides the class.  Bag-of-embedding
  averages are class-blind by construction, so any separation of weighted
  document embeddings must come from the attribution weights.

A manifest records generator settings and realized corpus statistics for
downstream consistency checks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODE_MARKERS = "markers"
MODE_ADJACENT_PAIR = "adjacent-pair"


@dataclass
class SyntheticSpec:
    mode: str = MODE_MARKERS
    num_docs: int = 2000
    num_classes: int = 2
    target_vocab: int = 500        # reserved ids included
    markers_per_class: int = 8
    min_markers: int = 1
    max_markers: int = 2
    secondary_markers: int = 0     # markers of one random other class per doc
    min_len: int = 18
    max_len: int = 28
    pair_gap: int = 6              # adjacent-pair mode: min separation for class 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_MARKERS, MODE_ADJACENT_PAIR):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if self.mode == MODE_ADJACENT_PAIR and self.num_classes != 2:
            raise ValueError("adjacent-pair mode is binary")
        if self.min_len < self.max_markers + self.secondary_markers + 2:
            raise ValueError("documents too short for the requested marker counts")

    @property
    def filler_count(self) -> int:
        n_special = 2 if self.mode == MODE_ADJACENT_PAIR else self.num_classes * self.markers_per_class
        n = self.target_vocab - 2 - n_special
        if n < 1:
            raise ValueError("target_vocab too small for the requested marker tokens")
        return n


def marker_tokens(spec: SyntheticSpec) -> list[list[str]]:
    if spec.mode == MODE_ADJACENT_PAIR:
        return [["mka", "mkb"]]
    return [
        [f"mark{c}x{i}" for i in range(spec.markers_per_class)]
        for c in range(spec.num_classes)
    ]


def _gen_markers(spec: SyntheticSpec, rng: np.random.Generator,
                 fillers: list[str]) -> list[tuple[str, int]]:
    markers = marker_tokens(spec)
    rows = []
    for i in range(spec.num_docs):
        label = i % spec.num_classes
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        tokens = [fillers[int(k)] for k in rng.integers(0, len(fillers), size=length)]
        n_primary = int(rng.integers(spec.min_markers, spec.max_markers + 1))
        total = n_primary + spec.secondary_markers
        positions = rng.choice(length, size=total, replace=False)
        replace = n_primary > spec.markers_per_class
        types = rng.choice(spec.markers_per_class, size=n_primary, replace=replace)
        for pos, mt in zip(positions[:n_primary], types):
            tokens[int(pos)] = markers[label][int(mt)]
        # secondary markers cycle over the other classes in ascending order,
        # giving every document weak off-class evidence
        others = [c for c in range(spec.num_classes) if c != label]
        for j in range(spec.secondary_markers):
            other = others[j % len(others)]
            mt = int(rng.integers(0, spec.markers_per_class))
            tokens[int(positions[n_primary + j])] = markers[other][mt]
        rows.append((" ".join(tokens), label))
    return rows


def _gen_adjacent_pair(spec: SyntheticSpec, rng: np.random.Generator,
                       fillers: list[str]) -> list[tuple[str, int]]:
    rows = []
    for i in range(spec.num_docs):
        label = i % 2
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        tokens = [fillers[int(k)] for k in rng.integers(0, len(fillers), size=length)]
        if label == 1:
            pos = int(rng.integers(0, length - 1))
            tokens[pos] = "mka"
            tokens[pos + 1] = "mkb"
        else:
            pos_a = int(rng.integers(0, length - spec.pair_gap - 1))
            pos_b = pos_a + spec.pair_gap + int(rng.integers(0, length - pos_a - spec.pair_gap))
            pos_b = min(pos_b, length - 1)
            tokens[pos_a] = "mka"
            tokens[pos_b] = "mkb"
        rows.append((" ".join(tokens), label))
    return rows


def generate(spec: SyntheticSpec) -> tuple[list[tuple[str, int]], dict]:
    """Return (rows, manifest) where rows are (text, label) pairs."""
    rng = np.random.default_rng(spec.seed)
    fillers = [f"w{i:04d}" for i in range(spec.filler_count)]
    if spec.mode == MODE_ADJACENT_PAIR:
        rows = _gen_adjacent_pair(spec, rng, fillers)
    else:
        rows = _gen_markers(spec, rng, fillers)
    seen: set[str] = set()
    for text, _ in rows:
        seen.update(text.split())
    manifest = {
        "generator": "planted-signal",
        "mode": spec.mode,
        "seed": spec.seed,
        "num_docs": spec.num_docs,
        "num_classes": spec.num_classes,
        "class_counts": [sum(1 for _, y in rows if y == c) for c in range(spec.num_classes)],
        "distinct_tokens": len(seen),
        "expected_vocab_size": len(seen) + 2,
        "marker_tokens": marker_tokens(spec),
        "doc_length_range": [spec.min_len, spec.max_len],
        "recommended_seq_len": 30,
    }
    if spec.mode == MODE_MARKERS:
        manifest["markers_per_doc_range"] = [spec.min_markers, spec.max_markers]
        manifest["secondary_markers"] = spec.secondary_markers
    else:
        manifest["pair_gap"] = spec.pair_gap
    return rows, manifest


def write_corpus(rows: list[tuple[str, int]], manifest: dict, out_dir: str | Path,
                 fmt: str = "csv") -> tuple[Path, Path]:
    """Write the corpus file plus its manifest; returns (corpus_path, manifest_path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        corpus_path = out_dir / "synthetic.csv"
        with open(corpus_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["text", "label"])
            writer.writerows(rows)
    elif fmt == "jsonl":
        corpus_path = out_dir / "synthetic.jsonl"
        with open(corpus_path, "w", encoding="utf-8") as fh:
            for text, label in rows:
                fh.write(json.dumps({"text": text, "label": label}, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    manifest_path = out_dir / "synthetic_manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return corpus_path, manifest_path
