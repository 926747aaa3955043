"""Six-family constraint profiles, attribute-marker mining and constraint F1."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.metrics import f1_score

from .corpus import Domain, TokenSequence

LONG_THRESHOLD = 10
MAX_ADJECTIVES = 5
MAX_PROPER_NOUNS = 3
MAX_TREE_HEIGHT = 10
MAX_DOMAIN_ATTRS = 5

PERSONAL_PRONOUNS = frozenset(
    "i you he she we they me him her us them my your his its our their "
    "mine yours hers ours theirs".split()
)

TAGS = ("ADJ", "PROPN", "PRON_PERS", "OTHER")

# Families in declaration order with their number of classes.
FAMILIES = ("length", "pronoun", "adjectives", "proper_nouns", "tree_height", "domain_attrs")
FAMILY_SIZES = {
    "length": 2,
    "pronoun": 2,
    "adjectives": MAX_ADJECTIVES + 2,
    "proper_nouns": MAX_PROPER_NOUNS + 2,
    "tree_height": MAX_TREE_HEIGHT + 1,
    "domain_attrs": MAX_DOMAIN_ATTRS + 2,
}
PROFILE_DIM = sum(FAMILY_SIZES.values())  # 34
_OFFSETS = dict(zip(FAMILIES, np.cumsum([0] + [FAMILY_SIZES[f] for f in FAMILIES])[:-1].tolist()))


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ConstraintProfile:
    """Class indices per family.

    The last index of each counted family is the catch-all ``OVER`` label;
    ``tree_height`` index ``k`` stands for height ``k + 1``.
    """

    length: int
    pronoun: int
    adjectives: int
    proper_nouns: int
    tree_height: int
    domain_attrs: int

    def __post_init__(self):
        for f in FAMILIES:
            v = getattr(self, f)
            if not 0 <= v < FAMILY_SIZES[f]:
                raise ConstraintError(f"{f} class {v} out of range")

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in FAMILIES)

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(PROFILE_DIM, dtype=np.float32)
        for f in FAMILIES:
            vec[_OFFSETS[f] + getattr(self, f)] = 1.0
        return vec

    def labels(self) -> tuple[str, ...]:
        return tuple(_label(f, getattr(self, f)) for f in FAMILIES)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "ConstraintProfile":
        if len(labels) != len(FAMILIES):
            raise ConstraintError(f"expected {len(FAMILIES)} labels, got {len(labels)}")
        return cls(*(_parse_label(f, lab) for f, lab in zip(FAMILIES, labels)))


def _label(family: str, idx: int) -> str:
    if family == "length":
        return ("SHORT", "LONG")[idx]
    if family == "pronoun":
        return ("NO", "YES")[idx]
    if idx == FAMILY_SIZES[family] - 1:
        return "OVER"
    return str(idx + 1 if family == "tree_height" else idx)


def _parse_label(family: str, label: str) -> int:
    if family == "length":
        return ("SHORT", "LONG").index(label)
    if family == "pronoun":
        return ("NO", "YES").index(label)
    if label == "OVER":
        return FAMILY_SIZES[family] - 1
    value = int(label)
    return value - 1 if family == "tree_height" else value


def _bucket(count: int, upper: int) -> int:
    """0..upper, or upper + 1 for the catch-all."""
    return count if count <= upper else upper + 1


def profiles_to_targets(profiles: Sequence[ConstraintProfile]) -> np.ndarray:
    return np.stack([p.one_hot() for p in profiles]) if profiles else np.zeros((0, PROFILE_DIM), np.float32)


@dataclass(frozen=True)
class LinguisticAnnotation:
    pos_tags: tuple[str, ...]
    tree_height: int

    def __post_init__(self):
        if self.tree_height < 1:
            raise ConstraintError(f"tree height must be >= 1, got {self.tree_height}")
        bad = set(self.pos_tags) - set(TAGS)
        if bad:
            raise ConstraintError(f"unknown tags {sorted(bad)}")


@dataclass
class Lexicons:
    adjectives: frozenset[str] = frozenset()
    proper_nouns: frozenset[str] = frozenset()
    pronouns: frozenset[str] = PERSONAL_PRONOUNS

    @classmethod
    def from_files(cls, adjectives: str | Path | None = None,
                   proper_nouns: str | Path | None = None) -> "Lexicons":
        def _read(p):
            if p is None:
                return frozenset()
            return frozenset(w.strip() for w in Path(p).read_text(encoding="utf-8").split() if w.strip())
        return cls(_read(adjectives), _read(proper_nouns))


def words_of(seq: TokenSequence | str | Sequence[str]) -> list[str]:
    if isinstance(seq, TokenSequence):
        return seq.raw_text.split()[: len(seq.tokens)]
    if isinstance(seq, str):
        return seq.split()
    return list(seq)


def builtin_annotate(seq: TokenSequence | str, lexicons: Lexicons) -> LinguisticAnnotation:
    """Lexicon tagging plus a log-depth tree-height proxy."""
    tags = []
    for w in words_of(seq):
        lw = w.lower()
        if lw in lexicons.pronouns:
            tags.append("PRON_PERS")
        elif w in lexicons.proper_nouns or lw in lexicons.proper_nouns:
            tags.append("PROPN")
        elif lw in lexicons.adjectives:
            tags.append("ADJ")
        else:
            tags.append("OTHER")
    n = len(tags)
    height = math.ceil(math.log2(n)) + 1 if n > 0 else 1
    return LinguisticAnnotation(tuple(tags), height)


@dataclass
class AttributeMarkerSet:
    markers: dict[Domain, set[tuple[str, ...]]] = field(
        default_factory=lambda: {Domain.SOURCE: set(), Domain.TARGET: set()})
    gamma: float = 15.0
    lambda_s: float = 1.0
    max_n: int = 4

    def count(self, words: Sequence[str], domain: Domain) -> int:
        """Number of n-gram positions (all orders) that are markers of ``domain``."""
        marks = self.markers[Domain(domain)]
        if not marks:
            return 0
        total = 0
        for n in range(1, self.max_n + 1):
            for i in range(len(words) - n + 1):
                if tuple(words[i:i + n]) in marks:
                    total += 1
        return total

    def save(self, path: str | Path) -> None:
        lines = [f"# gamma={self.gamma} lambda_s={self.lambda_s} max_n={self.max_n}"]
        for tag, dom in (("[src]", Domain.SOURCE), ("[tgt]", Domain.TARGET)):
            lines.append(tag)
            lines.extend(" ".join(g) for g in sorted(self.markers[dom]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AttributeMarkerSet":
        out = cls()
        current = None
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if line.startswith("#"):
                for kv in line[1:].split():
                    k, _, v = kv.partition("=")
                    if k == "gamma":
                        out.gamma = float(v)
                    elif k == "lambda_s":
                        out.lambda_s = float(v)
                    elif k == "max_n":
                        out.max_n = int(v)
                continue
            if not line:
                continue
            if line == "[src]":
                current = Domain.SOURCE
            elif line == "[tgt]":
                current = Domain.TARGET
            elif current is None:
                raise ConstraintError(f"{path}: n-gram before a section header")
            else:
                out.markers[current].add(tuple(line.split()))
        return out


def ngram_counts(corpus: Iterable, max_n: int) -> Counter:
    counts: Counter = Counter()
    for sent in corpus:
        w = words_of(sent)
        for n in range(1, max_n + 1):
            for i in range(len(w) - n + 1):
                counts[tuple(w[i:i + n])] += 1
    return counts


def salience(count_toward: float, count_away: float, lambda_s: float) -> float:
    return (count_toward + lambda_s) / (count_away + lambda_s)


def mine_attribute_markers(src_corpus, tgt_corpus, gamma: float = 15.0, lambda_s: float = 1.0,
                           max_n: int = 4) -> AttributeMarkerSet:
    if gamma <= 1 or lambda_s <= 0:
        raise ConstraintError("need gamma > 1 and lambda_s > 0")
    src = ngram_counts(src_corpus, max_n)
    tgt = ngram_counts(tgt_corpus, max_n)
    result = AttributeMarkerSet(gamma=gamma, lambda_s=lambda_s, max_n=max_n)
    for gram in src.keys() | tgt.keys():
        cs, ct = src.get(gram, 0), tgt.get(gram, 0)
        if salience(cs, ct, lambda_s) >= gamma:
            result.markers[Domain.SOURCE].add(gram)
        if salience(ct, cs, lambda_s) >= gamma:
            result.markers[Domain.TARGET].add(gram)
    return result


def extract_profile(seq: TokenSequence, ann: LinguisticAnnotation,
                    markers: AttributeMarkerSet | None = None, index: int | None = None) -> ConstraintProfile:
    n = len(seq.tokens)
    if len(ann.pos_tags) != n:
        where = f"sentence {index}" if index is not None else "sentence"
        raise ConstraintError(f"{where}: annotation has {len(ann.pos_tags)} tags for {n} tokens")
    tags = Counter(ann.pos_tags)
    n_markers = markers.count(words_of(seq), seq.domain_tag) if markers is not None else 0
    height = ann.tree_height
    return ConstraintProfile(
        length=int(n >= LONG_THRESHOLD),
        pronoun=int(tags["PRON_PERS"] > 0),
        adjectives=_bucket(tags["ADJ"], MAX_ADJECTIVES),
        proper_nouns=_bucket(tags["PROPN"], MAX_PROPER_NOUNS),
        tree_height=height - 1 if height <= MAX_TREE_HEIGHT else MAX_TREE_HEIGHT,
        domain_attrs=_bucket(n_markers, MAX_DOMAIN_ATTRS),
    )


def profile_corpus(seqs: Sequence[TokenSequence], lexicons: Lexicons | None = None,
                   markers: AttributeMarkerSet | None = None,
                   annotations: Mapping[int, LinguisticAnnotation] | None = None) -> list[ConstraintProfile]:
    """Profiles for a corpus using file annotations if given, else the builtin tagger."""
    lexicons = lexicons or Lexicons()
    out = []
    for i, seq in enumerate(seqs):
        if annotations is not None:
            if i not in annotations:
                raise ConstraintError(f"no annotation for sentence {i}")
            ann = annotations[i]
        else:
            ann = builtin_annotate(seq, lexicons)
        out.append(extract_profile(seq, ann, markers, index=i))
    return out


def load_annotations(path: str | Path, token_counts: Sequence[int] | None = None) -> dict[int, LinguisticAnnotation]:
    """Read ``index<TAB>tags<TAB>tree_height`` rows; indices must run 0, 1, 2, ..."""
    out: dict[int, LinguisticAnnotation] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ConstraintError(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                idx, height = int(cols[0]), int(cols[2])
            except ValueError as exc:
                raise ConstraintError(f"{path}:{lineno}: {exc}") from None
            if idx != len(out):
                raise ConstraintError(f"{path}:{lineno}: expected index {len(out)}, got {idx}")
            tags = tuple(cols[1].split())
            if token_counts is not None:
                if idx >= len(token_counts) or len(tags) != token_counts[idx]:
                    expected = token_counts[idx] if idx < len(token_counts) else "no sentence"
                    raise ConstraintError(f"{path}:{lineno}: {len(tags)} tags, expected {expected}")
            try:
                out[idx] = LinguisticAnnotation(tags, height)
            except ConstraintError as exc:
                raise ConstraintError(f"{path}:{lineno}: {exc}") from None
    if token_counts is not None and len(out) != len(token_counts):
        raise ConstraintError(f"{path}: {len(out)} annotations for {len(token_counts)} sentences")
    return out


def constraint_f1(source_profiles: Sequence[ConstraintProfile],
                  transferred_profiles: Sequence[ConstraintProfile]) -> dict[str, float]:
    """Macro-F1 per family, labels taken from the union of gold and predicted."""
    if len(source_profiles) != len(transferred_profiles):
        raise ConstraintError(
            f"{len(source_profiles)} source profiles vs {len(transferred_profiles)} transferred")
    if not source_profiles:
        raise ConstraintError("no profiles to score")
    scores = {}
    for f in FAMILIES:
        gold = [getattr(p, f) for p in source_profiles]
        pred = [getattr(p, f) for p in transferred_profiles]
        labels = sorted(set(gold) | set(pred))
        scores[f] = float(f1_score(gold, pred, labels=labels, average="macro", zero_division=0))
    return scores


def write_profiles(path: str | Path, profiles: Sequence[ConstraintProfile]) -> None:
    rows = ["\t".join(FAMILIES)] + ["\t".join(p.labels()) for p in profiles]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_profiles(path: str | Path) -> list[ConstraintProfile]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != FAMILIES:
        raise ConstraintError(f"{path}: missing profile header")
    return [ConstraintProfile.from_labels(ln.split("\t")) for ln in lines[1:] if ln]

