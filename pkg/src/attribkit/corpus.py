"""Text ingestion: tokenization, vocabulary construction, encoding, label
remapping, split assignment, and on-disk corpus serialization."""

from __future__ import annotations

import csv
import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

#: Sentinel returned by :func:`remap_labels_yelp` for reviews that are dropped.
DROP = -1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

CORPUS_SCHEMA_VERSION = 1


class CorpusError(Exception):
    """Malformed input file or inconsistent corpus state."""


def tokenize(raw_text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes standalone tokens.

    "No stars!" -> ["no", "stars", "!"].  Empty input yields an empty list.
    """
    return _TOKEN_RE.findall(raw_text.lower())


@dataclass
class Vocabulary:
    """Token <-> dense integer id mapping with reserved PAD=0 and UNK=1."""

    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_for(self, token_id: int) -> str:
        return self.id_to_token[token_id]


def build_vocabulary(texts: list[str], min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Build a vocabulary from raw texts.

    Tokens with frequency < `min_count` are not entered (they encode to UNK).
    Ordering is frequency-descending, ties broken lexicographically, truncated
    so the total size (reserved ids included) is at most `max_size`.
    """
    if not texts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if max_size is not None and max_size < 2:
        raise CorpusError("max_size must be at least 2 to hold the reserved ids")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    if max_size is not None:
        kept = kept[: max_size - 2]
    id_to_token = [PAD_TOKEN, UNK_TOKEN, *kept]
    token_to_id = {tok: i for i, tok in enumerate(id_to_token) if i >= 2}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token)


def encode(tokens: list[str], vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Map tokens to ids, truncate at `seq_len`, right-pad with PAD."""
    if seq_len < 1:
        raise CorpusError("seq_len must be >= 1")
    ids = np.full(seq_len, PAD_ID, dtype=np.int32)
    for j, tok in enumerate(tokens[:seq_len]):
        ids[j] = vocab.id_for(tok)
    return ids


def remap_labels_yelp(stars: int) -> int:
    """Collapse a 1..5 star rating to binary sentiment.

    1 and 2 stars -> class 0, 4 and 5 stars -> class 1, 3 stars -> DROP.
    """
    if stars not in (1, 2, 3, 4, 5):
        raise CorpusError(f"star rating must be in 1..5, got {stars!r}")
    if stars == 3:
        return DROP
    return 0 if stars <= 2 else 1


@dataclass
class LabeledDocument:
    doc_id: int
    raw_text: str
    token_ids: np.ndarray  # int32, length == seq_len
    label: int


@dataclass
class Corpus:
    documents: list[LabeledDocument]
    num_classes: int
    class_names: list[str]
    splits: dict[str, list[int]] = field(default_factory=dict)
    vocab: Vocabulary | None = None
    seq_len: int = 0

    def split_documents(self, name: str) -> list[LabeledDocument]:
        return [self.documents[i] for i in self.splits.get(name, [])]

    @property
    def train_documents(self) -> list[LabeledDocument]:
        return self.split_documents("train")

    @property
    def validation_documents(self) -> list[LabeledDocument]:
        return self.split_documents("validation")


def _read_rows(path: Path, fmt: str, text_field: str, label_field: str | None):
    """Yield (row_number, text, raw_label, is_stars) from a CSV or JSONL file."""
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            label_col = label_field or ("stars" if "stars" in fields else "label")
            if text_field not in fields or label_col not in fields:
                raise CorpusError(
                    f"{path}: expected columns {text_field!r} and {label_col!r}, found {fields}"
                )
            for row_no, row in enumerate(reader, start=2):  # header is line 1
                text = row.get(text_field)
                label = row.get(label_col)
                if text is None or label is None or label == "":
                    raise CorpusError(f"{path}: malformed row {row_no}")
                yield row_no, text, label, label_col == "stars"
    elif fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for row_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}: malformed row {row_no}: {exc}") from exc
                if label_field is not None:
                    label_col = label_field
                else:
                    label_col = "stars" if "stars" in obj else "label"
                if text_field not in obj or label_col not in obj:
                    raise CorpusError(f"{path}: malformed row {row_no}: missing field")
                yield row_no, str(obj[text_field]), obj[label_col], label_col == "stars"
    else:
        raise CorpusError(f"unknown corpus format {fmt!r} (expected 'csv' or 'jsonl')")


def _parse_stars(raw, row_no: int, path: Path) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"{path}: malformed row {row_no}: bad star rating {raw!r}") from exc


def load_corpus(
    path: str | Path,
    fmt: str = "csv",
    *,
    text_field: str = "text",
    label_field: str | None = None,
    train_frac: float = 0.8,
    seed: int = 0,
    min_count: int = 1,
    max_size: int | None = None,
    seq_len: int = 64,
) -> Corpus:
    """Load a labeled text file into an encoded, split Corpus.

    Documents keep file order (3-star rows vanish before ids are assigned when
    a `stars` column drives the labels).  The train/validation split is a
    seeded uniform shuffle; every class must land in the train split.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    texts: list[str] = []
    raw_labels: list = []
    stars_mode = False
    for row_no, text, raw_label, is_stars in _read_rows(path, fmt, text_field, label_field):
        if is_stars:
            stars_mode = True
            label = remap_labels_yelp(_parse_stars(raw_label, row_no, path))
            if label == DROP:
                continue
        else:
            label = raw_label
        texts.append(text)
        raw_labels.append(label)
    if not texts:
        raise CorpusError(f"{path}: no usable documents")

    if stars_mode:
        class_names = ["negative", "positive"]
        labels = list(raw_labels)
    else:
        distinct = set(raw_labels)
        try:
            ordered = sorted({int(v) for v in distinct})
            if any(int(v) != float(v) for v in distinct):
                raise ValueError
            class_names = [str(v) for v in ordered]
            index_of = {v: i for i, v in enumerate(ordered)}
            labels = [index_of[int(v)] for v in raw_labels]
        except (TypeError, ValueError):
            ordered_s = sorted(str(v) for v in distinct)
            class_names = ordered_s
            index_of_s = {v: i for i, v in enumerate(ordered_s)}
            labels = [index_of_s[str(v)] for v in raw_labels]
    num_classes = len(class_names)
    if num_classes < 2:
        raise CorpusError("corpus must contain at least two classes")

    vocab = build_vocabulary(texts, min_count=min_count, max_size=max_size)
    documents = [
        LabeledDocument(doc_id=i, raw_text=t, token_ids=encode(tokenize(t), vocab, seq_len), label=y)
        for i, (t, y) in enumerate(zip(texts, labels))
    ]

    n = len(documents)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * train_frac)
    train_idx = sorted(int(i) for i in perm[:n_train])
    val_idx = sorted(int(i) for i in perm[n_train:])
    train_classes = {documents[i].label for i in train_idx}
    missing = set(range(num_classes)) - train_classes
    if missing:
        raise CorpusError(f"classes {sorted(missing)} absent from the train split; reshuffle with another seed")

    return Corpus(
        documents=documents,
        num_classes=num_classes,
        class_names=class_names,
        splits={"train": train_idx, "validation": val_idx},
        vocab=vocab,
        seq_len=seq_len,
    )


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    """Write `corpus.json` (manifest) plus `token_ids.bin` (int32 LE id matrix).

    The binary layout is two little-endian int32 dims (num_docs, seq_len)
    followed by the row-major id matrix.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": CORPUS_SCHEMA_VERSION,
        "num_classes": corpus.num_classes,
        "class_names": corpus.class_names,
        "seq_len": corpus.seq_len,
        "vocab": corpus.vocab.id_to_token if corpus.vocab else [],
        "splits": corpus.splits,
        "documents": [
            {"doc_id": d.doc_id, "raw_text": d.raw_text, "label": d.label}
            for d in corpus.documents
        ],
    }
    with open(out_dir / "corpus.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True)
    ids = np.stack([d.token_ids for d in corpus.documents]) if corpus.documents else np.zeros((0, corpus.seq_len), dtype=np.int32)
    with open(out_dir / "token_ids.bin", "wb") as fh:
        fh.write(struct.pack("<ii", ids.shape[0], ids.shape[1]))
        fh.write(ids.astype("<i4").tobytes())


def load_corpus_dir(in_dir: str | Path) -> Corpus:
    """Load a corpus previously written by :func:`save_corpus`."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "corpus.json"
    ids_path = in_dir / "token_ids.bin"
    if not manifest_path.exists() or not ids_path.exists():
        raise CorpusError(f"{in_dir}: not a serialized corpus directory")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CORPUS_SCHEMA_VERSION:
        raise CorpusError(f"unsupported corpus schema version {manifest.get('schema_version')!r}")
    raw = ids_path.read_bytes()
    if len(raw) < 8:
        raise CorpusError(f"{ids_path}: truncated id file")
    n, seq_len = struct.unpack("<ii", raw[:8])
    expected = 8 + 4 * n * seq_len
    if len(raw) != expected:
        raise CorpusError(f"{ids_path}: expected {expected} bytes, found {len(raw)}")
    ids = np.frombuffer(raw, dtype="<i4", offset=8).reshape(n, seq_len).astype(np.int32)
    id_to_token = manifest["vocab"]
    vocab = Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(id_to_token) if i >= 2},
        id_to_token=list(id_to_token),
    )
    if ids.size and int(ids.max()) >= vocab.size:
        raise CorpusError(f"{ids_path}: token id {int(ids.max())} out of vocabulary range {vocab.size}")
    docs_meta = manifest["documents"]
    if len(docs_meta) != n:
        raise CorpusError(f"{in_dir}: manifest lists {len(docs_meta)} documents, id file holds {n}")
    documents = [
        LabeledDocument(doc_id=m["doc_id"], raw_text=m["raw_text"], token_ids=ids[i], label=m["label"])
        for i, m in enumerate(docs_meta)
    ]
    return Corpus(
        documents=documents,
        num_classes=manifest["num_classes"],
        class_names=manifest["class_names"],
        splits={k: list(v) for k, v in manifest["splits"].items()},
        vocab=vocab,
        seq_len=seq_len,
    )
