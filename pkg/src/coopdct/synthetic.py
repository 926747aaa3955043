"""Templated two-domain corpora with controlled length and pronoun statistics.

Both domains share every content word; they differ only in a disjoint set
of marker adjectives, so a correct transfer swaps markers and keeps the
rest of the sentence (and therefore its length and pronoun) intact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import Lexicons

SOURCE_MARKERS = ("great", "excellent", "wonderful", "lovely", "superb", "delightful", "fantastic", "amazing")
TARGET_MARKERS = ("awful", "terrible", "horrible", "dreadful", "lousy", "disgusting", "mediocre", "pathetic")
PRONOUNS = ("i", "we", "they", "she", "he")
NOUNS = (
    "waiter", "chef", "manager", "staff", "owner", "driver", "host", "cashier", "guide", "baker",
    "barista", "cook", "clerk", "server", "teacher", "doctor", "nurse", "pilot", "tailor", "farmer",
)
OBJECTS = (
    "soup", "pasta", "salad", "pizza", "bread", "coffee", "cake", "steak", "rice", "burger",
    "tea", "juice", "pie", "sandwich", "noodles", "curry", "fries", "omelette", "tacos", "dessert",
)
VERBS = ("ordered", "served", "tasted", "cooked", "brought", "made", "shared", "picked", "wanted", "tried")
ADVERBS = ("quickly", "slowly", "quietly", "gladly", "finally", "kindly", "calmly", "carefully")


@dataclass(frozen=True)
class SyntheticSpec:
    n_sentences: int = 2000
    p_long_source: float = 0.5
    p_long_target: float = 0.5
    p_pronoun_source: float = 0.5
    p_pronoun_target: float = 0.5


def _sentence(rng: np.random.Generator, markers, long: bool, pronoun: bool) -> str:
    subj = [str(rng.choice(PRONOUNS))] if pronoun else ["the", str(rng.choice(NOUNS))]
    words = subj + [str(rng.choice(VERBS)), "the", str(rng.choice(OBJECTS)), "and", "it", "was", str(rng.choice(markers))]
    if long:
        words += ["when", "the", str(rng.choice(NOUNS)), str(rng.choice(ADVERBS)), str(rng.choice(VERBS)),
                  "the", str(rng.choice(OBJECTS))]
    return " ".join(words)


def generate_domain(n: int, markers, p_long: float, p_pronoun: float, rng: np.random.Generator) -> list[str]:
    longs = rng.random(n) < p_long
    prons = rng.random(n) < p_pronoun
    return [_sentence(rng, markers, bool(lg), bool(pr)) for lg, pr in zip(longs, prons)]


def generate_corpora(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> tuple[list[str], list[str]]:
    rng = np.random.default_rng(seed)
    src = generate_domain(spec.n_sentences, SOURCE_MARKERS, spec.p_long_source, spec.p_pronoun_source, rng)
    tgt = generate_domain(spec.n_sentences, TARGET_MARKERS, spec.p_long_target, spec.p_pronoun_target, rng)
    return src, tgt


def lexicons() -> Lexicons:
    """Marker adjectives tagged ADJ; no proper nouns."""
    return Lexicons(adjectives=frozenset(SOURCE_MARKERS + TARGET_MARKERS))
