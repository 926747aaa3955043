"""Two-domain corpora: vocabulary, token sequences and padded batches."""
from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
DEFAULT_MAX_LEN = 30

# Table 1 vocabulary caps.
MAX_VOCAB_PRESETS = {"yelp": 10000, "imdb": 30000, "political": 30000}


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1

    @property
    def other(self) -> "Domain":
        return Domain(1 - self)


class CorpusError(RuntimeError):
    pass


class Vocabulary:
    """Frequency-capped vocabulary with four fixed reserved ids."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def words(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.id_to_token[len(RESERVED):]

    def save(self, path: str | Path) -> None:
        # line number = id - 4; reserved ids are implicit
        Path(path).write_text("".join(t + "\n" for t in self.words()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def read_lines(path: str | Path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [ln.rstrip("\n") for ln in fh]
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc


def vocabulary_from_sentences(sentences: Iterable[str], max_vocab: int) -> Vocabulary:
    counts: Counter[str] = Counter()
    for line in sentences:
        # Counter preserves first-insertion order, so equal counts keep first occurrence
        counts.update(line.split())
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    keep = max(max_vocab - len(RESERVED), 0)
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])  # stable
    return Vocabulary([tok for tok, _ in ranked[:keep]])


def build_vocabulary(corpus_files: Sequence[str | Path], max_vocab: int) -> Vocabulary:
    """Keep the ``max_vocab - 4`` most frequent tokens across all files."""
    lines: list[str] = []
    for path in corpus_files:
        lines.extend(read_lines(path))
    return vocabulary_from_sentences(lines, max_vocab)


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    domain_tag: Domain
    raw_text: str = ""

    def __len__(self) -> int:
        return len(self.tokens)


def encode_sentence(raw: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN,
                    domain: Domain = Domain.SOURCE) -> TokenSequence:
    words = raw.split()
    if not words:
        raise ValueError("empty sentence")
    ids = tuple(vocab.lookup(w) for w in words[:max_len])
    return TokenSequence(ids, Domain(domain), raw)


def decode_tokens(tokens: Iterable[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.id_to_token[t] for t in tokens)


def encode_corpus(lines: Iterable[str], vocab: Vocabulary, domain: Domain,
                  max_len: int = DEFAULT_MAX_LEN) -> list[TokenSequence]:
    """Bulk encoding; empty lines are skipped with a warning."""
    out = []
    for lineno, line in enumerate(lines, 1):
        try:
            out.append(encode_sentence(line, vocab, max_len, domain))
        except ValueError:
            logger.warning("skipping empty line %d", lineno)
    return out


def load_corpus(path: str | Path, vocab: Vocabulary, domain: Domain,
                max_len: int = DEFAULT_MAX_LEN) -> list[TokenSequence]:
    return encode_corpus(read_lines(path), vocab, domain, max_len)


@dataclass
class PaddedBatch:
    ids: np.ndarray  # int64 [B, T_max]
    lengths: np.ndarray  # int64 [B]
    domain_tags: np.ndarray = field(default=None)  # int64 [B]

    def __post_init__(self):
        if self.domain_tags is None:
            self.domain_tags = np.zeros(len(self.lengths), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.lengths)

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def rows(self, index) -> "PaddedBatch":
        index = np.asarray(index)
        lengths = self.lengths[index]
        width = max(int(lengths.max()), 1) if len(lengths) else 1
        return PaddedBatch(self.ids[index, :width], lengths, self.domain_tags[index])


def pad_sequences(seqs: Sequence[TokenSequence]) -> PaddedBatch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if len(seqs) and lengths.min() < 1:
        raise ValueError("cannot batch an empty sequence")
    width = int(lengths.max()) if len(seqs) else 1
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s.tokens
    tags = np.array([int(s.domain_tag) for s in seqs], dtype=np.int64)
    return PaddedBatch(ids, lengths, tags)


def make_batches(seqs: Sequence[TokenSequence], batch_size: int, seed: int) -> Iterator[PaddedBatch]:
    """One shuffled pass over ``seqs``; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(seqs))
    for start in range(0, len(order), batch_size):
        yield pad_sequences([seqs[i] for i in order[start:start + batch_size]])


class BatchSampler:
    """Endless per-domain stream of shuffled batches (reshuffled every epoch).

    Every full batch has exactly ``batch_size`` rows; a wrap-around batch is
    topped up from the next permutation.
    """

    def __init__(self, seqs: Sequence[TokenSequence], batch_size: int, rng: np.random.Generator):
        if not seqs:
            raise CorpusError("cannot sample from an empty corpus")
        self.seqs = seqs
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0
        self.epoch = 0

    def next_indices(self) -> np.ndarray:
        picked = []
        need = self.batch_size
        while need > 0:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(len(self.seqs))
                self._pos = 0
                self.epoch += 1
            take = self._order[self._pos:self._pos + need]
            self._pos += len(take)
            need -= len(take)
            picked.append(take)
        return np.concatenate(picked)

    def next_batch(self) -> tuple[PaddedBatch, np.ndarray]:
        idx = self.next_indices()
        return pad_sequences([self.seqs[i] for i in idx]), idx
