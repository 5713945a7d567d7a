"""Corpus ingestion: vocabulary, sentence encoding and mini-batches.

A sentence is one line of whitespace-separated tokens. Every encoded sentence
ends with ``<EOS>``, which is predicted like any other word; ``<BOS>`` only
ever pads the context window on the input side.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK = "<UNK>"
BOS = "<BOS>"
EOS = "<EOS>"
RESERVED = (UNK, BOS, EOS)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2


class Vocabulary:
    """Bijective word/id map with the reserved tokens at ids 0, 1, 2."""

    def __init__(self, words: Sequence[str] = (), max_size: int | None = None):
        self.id_to_word = list(RESERVED)
        self.word_to_id = {w: i for i, w in enumerate(RESERVED)}
        for w in words:
            if w in self.word_to_id:
                raise ValueError(f"duplicate vocabulary entry {w!r}")
            self.word_to_id[w] = len(self.id_to_word)
            self.id_to_word.append(w)
        self.max_size = len(self.id_to_word) if max_size is None else max_size
        if len(self) > self.max_size:
            raise ValueError(f"vocabulary of {len(self)} exceeds max_size={self.max_size}")

    def __len__(self):
        return len(self.id_to_word)

    def __contains__(self, word):
        return word in self.word_to_id

    def encode_word(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def save(self, path):
        Path(path).write_text("".join(w + "\n" for w in self.id_to_word), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: vocabulary file must start with {', '.join(RESERVED)}")
        return cls(lines[len(RESERVED) :])


def tokenize(text: str) -> list[list[str]]:
    """Split text into sentences (lines) of whitespace tokens, dropping empty lines."""
    return [line.split() for line in text.splitlines() if line.split()]


def build_vocab(tokens: Iterable[str], max_size: int) -> Vocabulary:
    """Keep the ``max_size - 3`` most frequent words.

    Frequency ties go to the word seen first, so the result is deterministic.
    """
    if max_size < len(RESERVED) + 1:
        raise ValueError(f"max_size must be >= {len(RESERVED) + 1}, got {max_size}")
    counts = Counter()
    first_seen = {}
    for tok in tokens:
        if tok not in first_seen:
            first_seen[tok] = len(first_seen)
        counts[tok] += 1
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty token stream")
    for w in RESERVED:
        counts.pop(w, None)
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    return Vocabulary(ranked[: max_size - len(RESERVED)], max_size=max_size)


def encode_sentence(words: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    return np.array([vocab.encode_word(w) for w in words] + [EOS_ID], dtype=np.int64)


def encode_corpus(text: str, vocab: Vocabulary) -> list[np.ndarray]:
    return [encode_sentence(s, vocab) for s in tokenize(text)]


def write_encoded(path, sentences: Sequence[np.ndarray], vocab_size: int):
    """One sentence per line as space-separated ids (EOS included)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vocab_size={vocab_size}\n")
        for s in sentences:
            fh.write(" ".join(str(int(i)) for i in s) + "\n")


def read_encoded(path) -> tuple[list[np.ndarray], int]:
    """Inverse of ``write_encoded``; returns ``(sentences, vocab_size)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# vocab_size="):
            raise ValueError(f"{path}: missing '# vocab_size=' header line")
        vocab_size = int(header.split("=", 1)[1])
        sentences = [np.array(line.split(), dtype=np.int64) for line in fh if line.strip()]
    return sentences, vocab_size


@dataclass(frozen=True)
class SentenceBatch:
    """K whole sentences laid out position by position.

    ``contexts[p]`` holds the ``context_window`` ids preceding prediction
    position ``p`` (oldest first, BOS-padded) and ``targets[p]`` the id to
    predict. Positions of sentence k occupy a contiguous run of
    ``lengths[k]`` entries.
    """

    sentences: tuple
    lengths: tuple
    contexts: np.ndarray
    targets: np.ndarray

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    @property
    def num_positions(self) -> int:
        return int(self.targets.size)


def context_windows(sentence: np.ndarray, context_window: int) -> np.ndarray:
    padded = np.concatenate([np.full(context_window, BOS_ID, dtype=np.int64), sentence])
    n = sentence.size
    return np.stack([padded[j : j + n] for j in range(context_window)], axis=1)


def make_batch(sentences: Sequence[np.ndarray], context_window: int) -> SentenceBatch:
    if not sentences:
        raise ValueError("a batch needs at least one sentence")
    sentences = tuple(np.asarray(s, dtype=np.int64) for s in sentences)
    if any(s.size == 0 for s in sentences):
        raise ValueError("sentences must contain at least one token (EOS)")
    if context_window < 1:
        raise ValueError("context_window must be >= 1")
    contexts = np.concatenate([context_windows(s, context_window) for s in sentences])
    targets = np.concatenate(sentences)
    return SentenceBatch(sentences, tuple(s.size for s in sentences), contexts, targets)


def make_batches(
    sentences: Sequence[np.ndarray],
    batch_size: int,
    seed: int | None,
    context_window: int = 2,
) -> list[SentenceBatch]:
    """Shuffle sentences with ``seed`` (``None`` keeps corpus order) and group them."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(sentences) == 0:
        raise ValueError("no sentences to batch")
    order = np.arange(len(sentences))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(sentences))
    return [
        make_batch([sentences[i] for i in order[k : k + batch_size]], context_window)
        for k in range(0, len(order), batch_size)
    ]


_TAG = re.compile(r"<[^>]*>")
_ENTITY = re.compile(r"&[a-z]+;|&#\d+;")
_MARKUP = re.compile(r"\[\[(?:[^|\]]*\|)?([^\]]*)\]\]|\{\{[^}]*\}\}|'{2,}|={2,}")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")


def clean_wiki_text(raw: str) -> str:
    """Best-effort plain text from a MediaWiki XML dump, one sentence per line.

    Tags, entities, link brackets, templates and emphasis quotes are dropped,
    text is lower-cased, split into sentences at ``.``/``!``/``?`` followed
    by whitespace, and tokenized into words and single punctuation marks.
    """
    text = _TAG.sub(" ", raw)
    text = _ENTITY.sub(" ", text)
    text = _MARKUP.sub(lambda m: m.group(1) or " ", text)
    lines = []
    for paragraph in text.lower().splitlines():
        for sentence in _SENTENCE_END.split(paragraph):
            tokens = _WORD.findall(sentence)
            if tokens:
                lines.append(" ".join(tokens))
    return "\n".join(lines) + ("\n" if lines else "")
