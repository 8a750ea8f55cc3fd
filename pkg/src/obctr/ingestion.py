"""Rating files, item text corpora and shuffled train/validation/test streams.

Formats
-------
ratings   MovieLens lines ``user::item::rating::timestamp``. Lines starting
          with ``#`` are comments; writers emit ``# obctr-ratings v1``.
documents UTF-8 TSV ``item_id<TAB>text``; writers emit ``# obctr-docs v1``.
manifest  JSON with ``format_version``, vocabulary, options and counts.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from .core import RatingEvent

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
RATINGS_HEADER = f"# obctr-ratings v{FORMAT_VERSION}"
DOCS_HEADER = f"# obctr-docs v{FORMAT_VERSION}"

_NON_WORD = re.compile(r"[^a-z0-9]+")


class ParseError(ValueError):
    def __init__(self, path, lineno: int, line: str):
        super().__init__(f"{path}:{lineno}: cannot parse rating line {line!r}")
        self.lineno = lineno


def parse_ratings(path, strict: bool = False) -> list[RatingEvent]:
    """Read a ``::``-delimited rating file in file order.

    Malformed lines are skipped and counted (logged as a warning) unless
    ``strict`` is set, in which case the first one raises ParseError.
    """
    events = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("::")
            try:
                if len(parts) not in (3, 4):
                    raise ValueError
                user, item, rating = int(parts[0]), int(parts[1]), float(parts[2])
                order = int(parts[3]) if len(parts) == 4 else lineno
                if not math.isfinite(rating):
                    raise ValueError
            except ValueError:
                if strict:
                    raise ParseError(path, lineno, text) from None
                skipped += 1
                continue
            events.append(RatingEvent(user, item, rating, order))
    if skipped:
        log.warning("%s: skipped %d malformed rating lines", path, skipped)
    return events


def write_ratings(path, events: Iterable[RatingEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RATINGS_HEADER + "\n")
        for e in events:
            fh.write(f"{e.user_id}::{e.item_id}::{e.rating!r}::{e.order_key}\n")


@dataclass
class CorpusOptions:
    min_df: int = 1
    max_vocab: int = 8000
    min_len: int = 2
    stopwords: bool = True

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Corpus:
    vocabulary: list[str]
    docs: dict[int, np.ndarray]
    options: CorpusOptions = field(default_factory=CorpusOptions)
    n_dropped: int = 0

    def __post_init__(self):
        self.word_to_id = {w: i for i, w in enumerate(self.vocabulary)}

    @property
    def D(self) -> int:
        return len(self.vocabulary)

    @property
    def lengths(self) -> dict[int, int]:
        return {j: len(t) for j, t in self.docs.items()}

    def manifest(self) -> dict:
        lengths = list(self.lengths.values())
        return {
            "format_version": FORMAT_VERSION,
            "vocabulary": self.vocabulary,
            "options": asdict(self.options),
            "options_hash": self.options.digest(),
            "counts": {"documents": len(self.docs), "vocabulary": self.D, "dropped": self.n_dropped,
                       "tokens": int(sum(lengths))},
        }

    def write(self, docs_path, manifest_path=None) -> None:
        """Write the corpus as a docs TSV (already-filtered tokens) and manifest."""
        with open(docs_path, "w", encoding="utf-8") as fh:
            fh.write(DOCS_HEADER + "\n")
            for j in sorted(self.docs):
                fh.write(f"{j}\t{' '.join(self.vocabulary[w] for w in self.docs[j])}\n")
        if manifest_path is not None:
            Path(manifest_path).write_text(json.dumps(self.manifest(), indent=1))


def tokenize(text: str, options: CorpusOptions) -> list[str]:
    words = _NON_WORD.sub(" ", text.lower()).split()
    return [w for w in words
            if len(w) >= options.min_len and not (options.stopwords and w in ENGLISH_STOP_WORDS)]


def read_documents(path) -> dict[int, str]:
    texts: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, text = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'item_id<TAB>text'")
            item = int(key)
            if item in texts:
                raise ValueError(f"{path}:{lineno}: duplicate item id {item}")
            texts[item] = text
    return texts


def build_vocabulary(tokenized: Mapping[int, Sequence[str]], options: CorpusOptions) -> list[str]:
    """Words kept by document frequency, ranked by summed tf-idf.

    Ties break on the word itself, so the vocabulary is deterministic.
    """
    n_docs = len(tokenized)
    df = Counter()
    tf = Counter()
    for words in tokenized.values():
        df.update(set(words))
        tf.update(words)
    kept = [w for w, d in df.items() if d >= options.min_df]
    score = {w: tf[w] * math.log(n_docs / df[w]) for w in kept}
    ranked = sorted(kept, key=lambda w: (-score[w], w))[: options.max_vocab]
    return sorted(ranked)


def build_corpus(docs_path, options: Optional[CorpusOptions] = None) -> Corpus:
    """Tokenise, filter and index an item text file."""
    return corpus_from_texts(read_documents(docs_path), options)


def corpus_from_texts(texts: Mapping[int, str], options: Optional[CorpusOptions] = None) -> Corpus:
    options = options or CorpusOptions()
    tokenized = {j: tokenize(t, options) for j, t in texts.items()}
    vocab = build_vocabulary(tokenized, options)
    index = {w: i for i, w in enumerate(vocab)}
    docs = {}
    dropped = 0
    for j in sorted(tokenized):
        ids = [index[w] for w in tokenized[j] if w in index]
        if not ids:
            dropped += 1
            log.info("dropping item %d: empty after filtering", j)
            continue
        docs[j] = np.array(ids, dtype=np.int64)
    if dropped:
        log.warning("dropped %d documents that were empty after filtering", dropped)
    return Corpus(vocab, docs, options, dropped)


@dataclass
class StreamSplit:
    train: list[RatingEvent]
    validation: list[RatingEvent]
    test: list[RatingEvent]
    seed: int

    def filter_items(self, items) -> tuple["StreamSplit", list[RatingEvent]]:
        """Drop events whose item is not in ``items``; returns them separately."""
        rejected = []

        def keep(events):
            out = []
            for e in events:
                (out if e.item_id in items else rejected).append(e)
            return out

        split = StreamSplit(keep(self.train), keep(self.validation), keep(self.test), self.seed)
        return split, rejected


def split_stream(events: Sequence[RatingEvent], seed: int, test_fraction: float = 0.1,
                 validation_fraction: float = 0.05) -> StreamSplit:
    """Shuffle, hold out the last ``test_fraction`` as test, then draw validation from train.

    ``train`` excludes the validation events, so train + validation is the
    90% training portion.
    """
    n = len(events)
    if n < 20:
        raise ValueError(f"need at least 20 events to split, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round((1.0 - test_fraction) * n))
    n_val = int(round(validation_fraction * n_train))
    val_mask = np.zeros(n_train, dtype=bool)
    val_mask[rng.choice(n_train, size=n_val, replace=False)] = True
    train_idx = order[:n_train]
    return StreamSplit(
        train=[events[k] for k in train_idx[~val_mask]],
        validation=[events[k] for k in train_idx[val_mask]],
        test=[events[k] for k in order[n_train:]],
        seed=seed,
    )
