"""Positive mining for the contrastive loss."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import FAMILIES, ConstraintProfile
from .corpus import Domain, PaddedBatch, TokenSequence, pad_sequences

# Families dropped one at a time, noisiest first, when a bucket is too small.
RELAX_ORDER = ("tree_height", "domain_attrs", "adjectives", "proper_nouns", "pronoun", "length")

Ref = tuple[Domain, int]


class MiningError(RuntimeError):
    pass


def _key(profile: ConstraintProfile, dropped: int) -> tuple:
    kept = [f for f in FAMILIES if f not in RELAX_ORDER[:dropped]]
    return tuple(getattr(profile, f) for f in kept)


class ProfileIndex:
    """Sentences of both domains grouped by profile, exact and at each relaxation level."""

    def __init__(self, profiles: dict[Domain, Sequence[ConstraintProfile]]):
        self.profiles = {Domain(d): list(p) for d, p in profiles.items()}
        self.levels: list[dict[tuple, list[Ref]]] = []
        for dropped in range(len(RELAX_ORDER) + 1):
            table: dict[tuple, list[Ref]] = defaultdict(list)
            for dom in sorted(self.profiles):
                for i, prof in enumerate(self.profiles[dom]):
                    table[_key(prof, dropped)].append((dom, i))
            self.levels.append(dict(table))
        if not self.levels[-1]:
            raise MiningError("no sentences to mine positives from")

    @property
    def buckets(self) -> dict[tuple, list[Ref]]:
        return self.levels[0]

    def bucket_sizes(self) -> dict[tuple, int]:
        return {k: len(v) for k, v in self.buckets.items()}

    def profile(self, ref: Ref) -> ConstraintProfile:
        return self.profiles[ref[0]][ref[1]]

    def candidates(self, ref: Ref, dropped: int) -> list[Ref]:
        return [r for r in self.levels[dropped][_key(self.profile(ref), dropped)] if r != ref]


def index_profiles(src_profiles: Sequence[ConstraintProfile], tgt_profiles: Sequence[ConstraintProfile]) -> ProfileIndex:
    return ProfileIndex({Domain.SOURCE: src_profiles, Domain.TARGET: tgt_profiles})


@dataclass
class ContrastiveBatch:
    batch: PaddedBatch
    refs: list[Ref]
    anchors: list[int]
    positives: list[list[int]]
    profiles: list[ConstraintProfile]
    relaxed: list[bool]

    @property
    def relaxed_rate(self) -> float:
        return float(np.mean(self.relaxed)) if self.relaxed else 0.0


@dataclass
class MiningStats:
    anchors: int = 0
    relaxed: int = 0
    with_replacement: int = 0
    drop_levels: Counter = field(default_factory=Counter)

    @property
    def relaxed_rate(self) -> float:
        return self.relaxed / self.anchors if self.anchors else 0.0


def _draw(pool: list[Ref], k: int, rng: np.random.Generator, replace: bool) -> list[Ref]:
    picks = rng.choice(len(pool), size=k, replace=replace)
    return [pool[i] for i in picks]


def mine_positives(index: ProfileIndex, anchor: Ref, k: int, rng: np.random.Generator,
                   domain: Domain | None = None, stats: MiningStats | None = None) -> tuple[list[Ref], bool]:
    """``k`` positives for ``anchor`` (restricted to ``domain`` if given) and a relaxed flag."""
    def _pool(dropped):
        cands = index.candidates(anchor, dropped)
        return cands if domain is None else [r for r in cands if r[0] == domain]

    for dropped in range(len(RELAX_ORDER) + 1):
        pool = _pool(dropped)
        if len(pool) >= k:
            if stats is not None:
                stats.drop_levels[dropped] += 1
            return _draw(pool, k, rng, replace=False), dropped > 0
    pool = _pool(len(RELAX_ORDER))
    if not pool:
        raise MiningError(f"no positive candidates for anchor {anchor}")
    if stats is not None:
        stats.with_replacement += 1
        stats.drop_levels[len(RELAX_ORDER)] += 1
    return _draw(pool, k, rng, replace=True), True


def sample_contrastive_batch(index: ProfileIndex, corpora: dict[Domain, Sequence[TokenSequence]], batch_size: int,
                             num_positives: int, rng: np.random.Generator, positives_per_domain: bool = False,
                             stats: MiningStats | None = None) -> ContrastiveBatch:
    """Pack anchor groups (anchor + mined positives) into one batch.

    Anchors are drawn uniformly from the source corpus; positives come from
    both domains pooled, or ``num_positives`` from each domain when
    ``positives_per_domain`` is set. Rows left over after the last full
    group are uniform random fillers that only serve as negatives.
    """
    per_anchor = num_positives * (2 if positives_per_domain else 1)
    if num_positives < 1 or batch_size < per_anchor + 2:
        raise MiningError(f"batch_size {batch_size} too small for {per_anchor} positives per anchor")
    n_src = len(corpora[Domain.SOURCE])
    if n_src == 0:
        raise MiningError("empty source corpus")
    refs: list[Ref] = []
    anchors: list[int] = []
    positives: list[list[int]] = []
    relaxed: list[bool] = []
    for _ in range(batch_size // (per_anchor + 1)):
        anchor = (Domain.SOURCE, int(rng.integers(n_src)))
        if positives_per_domain:
            mined, flags = [], []
            for dom in (Domain.SOURCE, Domain.TARGET):
                got, flag = mine_positives(index, anchor, num_positives, rng, dom, stats)
                mined += got
                flags.append(flag)
            was_relaxed = any(flags)
        else:
            mined, was_relaxed = mine_positives(index, anchor, num_positives, rng, None, stats)
        anchors.append(len(refs))
        refs.append(anchor)
        positives.append(list(range(len(refs), len(refs) + len(mined))))
        refs.extend(mined)
        relaxed.append(was_relaxed)
        if stats is not None:
            stats.anchors += 1
            stats.relaxed += int(was_relaxed)
    pool = [(d, i) for d in sorted(corpora) for i in range(len(corpora[d]))]
    while len(refs) < batch_size:
        refs.append(pool[int(rng.integers(len(pool)))])
    seqs = [corpora[d][i] for d, i in refs]
    return ContrastiveBatch(pad_sequences(seqs), refs, anchors, positives,
                            [index.profile(r) for r in refs], relaxed)


def mining_summary(index: ProfileIndex, stats: MiningStats | None = None) -> str:
    sizes = sorted(index.bucket_sizes().values())
    hist = Counter(sizes)
    lines = [f"buckets: {len(sizes)}", f"sentences: {sum(sizes)}", "bucket-size histogram (size: count):"]
    lines += [f"  {s}: {hist[s]}" for s in sorted(hist)]
    if stats is not None:
        lines.append(f"anchors mined: {stats.anchors}")
        lines.append(f"relaxed-match rate: {stats.relaxed_rate:.4f}")
        lines.append(f"with-replacement fallbacks: {stats.with_replacement}")
        for lvl in sorted(stats.drop_levels):
            lines.append(f"  families dropped {lvl}: {stats.drop_levels[lvl]}")
    return "\n".join(lines) + "\n"
