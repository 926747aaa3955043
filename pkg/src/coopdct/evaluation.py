"""Automatic transfer evaluation: ACC, FL, SIM, AGG and constraint F1."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .constraints import FAMILIES, ConstraintProfile, constraint_f1, words_of
from .corpus import Domain, Vocabulary


class EvaluationError(ValueError):
    pass


def _ngram_features(words: Sequence[str], ngram_max: int) -> list[str]:
    feats = list(words)
    for n in range(2, ngram_max + 1):
        feats += [" ".join(words[i:i + n]) for i in range(len(words) - n + 1)]
    return feats


def _split(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_held = max(1, int(round(n * fraction))) if n > 1 else 0
    return order[n_held:], order[:n_held]


class DomainClassifier(nn.Module):
    """Averaged n-gram embeddings with a linear logistic head (1 = target)."""

    def __init__(self, features: dict[str, int], dim: int):
        super().__init__()
        self.features = features
        self.ngram_max = 2
        self.bag = nn.EmbeddingBag(len(features) + 1, dim, mode="mean")
        self.head = nn.Linear(dim, 1)
        self.heldout_accuracy = float("nan")

    def _bags(self, sentences: Sequence) -> tuple[torch.Tensor, torch.Tensor]:
        ids, offsets = [], []
        for s in sentences:
            offsets.append(len(ids))
            feats = [self.features[f] for f in _ngram_features(words_of(s), self.ngram_max) if f in self.features]
            ids.extend(feats or [len(self.features)])  # last row: no known feature
        return torch.as_tensor(ids, dtype=torch.long), torch.as_tensor(offsets, dtype=torch.long)

    def forward(self, sentences: Sequence) -> torch.Tensor:
        ids, offsets = self._bags(sentences)
        return self.head(self.bag(ids, offsets)).squeeze(-1)

    @torch.no_grad()
    def predict(self, sentences: Sequence) -> np.ndarray:
        if not len(sentences):
            return np.zeros(0, dtype=np.int64)
        return (self(sentences) > 0).long().numpy()

    def accuracy(self, sentences: Sequence, labels: Sequence[int]) -> float:
        return float(np.mean(self.predict(sentences) == np.asarray(labels)))

    def acc(self, sentences: Sequence, domain: Domain) -> list[float]:
        """1.0 where the sentence is classified into ``domain``."""
        return [float(p == int(domain)) for p in self.predict(sentences)]


def train_domain_classifier(src_corpus: Sequence, tgt_corpus: Sequence, ngram_max: int = 2, epochs: int = 5,
                            seed: int = 0, dim: int = 16, lr: float = 0.05, batch_size: int = 64,
                            heldout_fraction: float = 0.1) -> DomainClassifier:
    if not len(src_corpus) or not len(tgt_corpus):
        raise EvaluationError("domain classifier needs sentences from both domains")
    rng = np.random.default_rng(seed)
    sents = list(src_corpus) + list(tgt_corpus)
    labels = np.array([0] * len(src_corpus) + [1] * len(tgt_corpus))
    train_idx, held_idx = _split(len(sents), heldout_fraction, rng)
    features: dict[str, int] = {}
    for i in train_idx:
        for f in _ngram_features(words_of(sents[i]), ngram_max):
            features.setdefault(f, len(features))
    torch.manual_seed(seed)
    clf = DomainClassifier(features, dim)
    clf.ngram_max = ngram_max
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    for _ in range(epochs):
        for start in range(0, len(train_idx), batch_size):
            idx = train_idx[start:start + batch_size]
            opt.zero_grad()
            loss = loss_fn(clf([sents[i] for i in idx]), torch.as_tensor(labels[idx], dtype=torch.float32))
            loss.backward()
            opt.step()
        rng.shuffle(train_idx)
    clf.heldout_accuracy = clf.accuracy([sents[i] for i in held_idx], labels[held_idx]) if len(held_idx) else float("nan")
    return clf


class NgramLanguageModel:
    """Add-k smoothed n-gram model over words plus an end marker."""

    def __init__(self, sentences: Sequence, order: int = 3, k: float = 0.1):
        self.order = order
        self.k = k
        self.counts: Counter = Counter()
        self.context_counts: Counter = Counter()
        vocab = {"</s>"}
        for s in sentences:
            w = words_of(s)
            vocab.update(w)
            for gram in self._grams(w):
                self.counts[gram] += 1
                self.context_counts[gram[:-1]] += 1
        self.vocab_size = len(vocab) + 1  # + unseen-word slot

    def _grams(self, words: Sequence[str]):
        padded = ["<s>"] * (self.order - 1) + list(words) + ["</s>"]
        for i in range(self.order - 1, len(padded)):
            yield tuple(padded[i - self.order + 1:i + 1])

    def log_perplexity(self, sentence) -> float:
        """Mean negative log-probability per predicted token (end marker included)."""
        grams = list(self._grams(words_of(sentence)))
        total = 0.0
        for g in grams:
            num = self.counts.get(g, 0) + self.k
            den = self.context_counts.get(g[:-1], 0) + self.k * self.vocab_size
            total -= math.log(num / den)
        return total / len(grams)


class FluencyScorer:
    """Binary acceptability: log-perplexity at or below a held-out percentile."""

    def __init__(self, train_corpus: Sequence, order: int = 3, k: float = 0.1, accept_rate: float = 0.9,
                 heldout_fraction: float = 0.1, seed: int = 0):
        sents = list(train_corpus)
        if len(sents) < 2:
            raise EvaluationError("fluency scorer needs at least two sentences")
        fit_idx, held_idx = _split(len(sents), heldout_fraction, np.random.default_rng(seed))
        self.lm = NgramLanguageModel([sents[i] for i in fit_idx], order, k)
        self.heldout_scores = np.array([self.lm.log_perplexity(sents[i]) for i in held_idx])
        self.threshold = float(np.percentile(self.heldout_scores, 100 * accept_rate))

    def fl(self, sentences: Sequence) -> list[float]:
        return [float(len(words_of(s)) > 0 and self.lm.log_perplexity(s) <= self.threshold) for s in sentences]


class SimilarityScorer:
    """Clamped cosine between mean token embeddings."""

    def __init__(self, embeddings: np.ndarray, vocab: Vocabulary):
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.vocab = vocab

    @classmethod
    def from_model(cls, model, vocab: Vocabulary) -> "SimilarityScorer":
        return cls(model.encoder.embedding.weight.detach().cpu().numpy(), vocab)

    def _mean(self, sentence) -> np.ndarray | None:
        w = words_of(sentence)
        if not w:
            return None
        return self.embeddings[[self.vocab.lookup(t) for t in w]].mean(axis=0)

    def similarity(self, a, b) -> float:
        ea, eb = self._mean(a), self._mean(b)
        if ea is None or eb is None:
            return 0.0
        na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
        if na == 0 or nb == 0:
            return 0.0
        return max(0.0, float(ea @ eb / (na * nb)))

    def sim(self, sources: Sequence, transferred: Sequence) -> list[float]:
        return [self.similarity(a, b) for a, b in zip(sources, transferred)]


def load_external_scores(path: str | Path, n: int | None = None) -> list[float]:
    """Per-sentence scores from ``index<TAB>score`` rows."""
    scores: dict[int, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            idx, val = line.split("\t")
            scores[int(idx)] = float(val)
        except ValueError:
            raise EvaluationError(f"{path}:{lineno}: expected index<TAB>score") from None
    n = len(scores) if n is None else n
    if sorted(scores) != list(range(n)):
        raise EvaluationError(f"{path}: indices must cover 0..{n - 1}")
    return [scores[i] for i in range(n)]


def aggregate(acc: Sequence[float], fl: Sequence[float], sim: Sequence[float]) -> float:
    """Mean over sentences of acc * sim * fl, in percent."""
    if not len(acc) == len(fl) == len(sim):
        raise EvaluationError(f"length mismatch: acc {len(acc)}, fl {len(fl)}, sim {len(sim)}")
    if not len(acc):
        raise EvaluationError("no sentences to aggregate")
    return 100.0 * float(np.mean(np.asarray(acc) * np.asarray(sim) * np.asarray(fl)))


@dataclass
class Scorers:
    acc: DomainClassifier
    fl: FluencyScorer
    sim: SimilarityScorer


@dataclass
class EvalReport:
    acc: list[float]
    fl: list[float]
    sim: list[float]
    ACC: float
    FL: float
    SIM: float
    AGG: float
    f1: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"sentences\t{len(self.acc)}"]
        lines += [f"{k}\t{getattr(self, k):.4f}" for k in ("ACC", "FL", "SIM", "AGG")]
        lines += [f"F1[{f}]\t{self.f1[f]:.4f}" for f in FAMILIES if f in self.f1]
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        rows = ["index\tacc\tfl\tsim\tagg"]
        rows += [f"{i}\t{a:g}\t{f:g}\t{s:.6f}\t{a * f * s:.6f}"
                 for i, (a, f, s) in enumerate(zip(self.acc, self.fl, self.sim))]
        return "\n".join(rows) + "\n"

    def write(self, out_dir: str | Path, prefix: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}_report.txt").write_text(self.to_text(), encoding="utf-8")
        (out / f"{prefix}_sentences.tsv").write_text(self.to_tsv(), encoding="utf-8")


def evaluate_system(source: Sequence, transferred: Sequence, target_domain: Domain, scorers: Scorers | None = None,
                    profiles_src: Sequence[ConstraintProfile] | None = None,
                    profiles_tr: Sequence[ConstraintProfile] | None = None,
                    acc: Sequence[float] | None = None, fl: Sequence[float] | None = None,
                    sim: Sequence[float] | None = None) -> EvalReport:
    """Score aligned source/transferred sentences.

    Any of ``acc``/``fl``/``sim`` given explicitly (e.g. external TSV
    scores) replaces the corresponding scorer.
    """
    n = len(source)
    if len(transferred) != n:
        raise EvaluationError(f"{n} source sentences vs {len(transferred)} transferred")
    if acc is None:
        acc = scorers.acc.acc(transferred, target_domain)
    if fl is None:
        fl = scorers.fl.fl(transferred)
    if sim is None:
        sim = scorers.sim.sim(source, transferred)
    for name, vals in (("acc", acc), ("fl", fl), ("sim", sim)):
        if len(vals) != n:
            raise EvaluationError(f"{name}: {len(vals)} scores for {n} sentences")
    f1 = {}
    if profiles_src is not None and profiles_tr is not None:
        f1 = constraint_f1(profiles_src, profiles_tr)
    return EvalReport(list(map(float, acc)), list(map(float, fl)), list(map(float, sim)),
                      100 * float(np.mean(acc)), 100 * float(np.mean(fl)), 100 * float(np.mean(sim)),
                      aggregate(acc, fl, sim), f1)


def select_temperature(model, dev_seqs, direction: str, scorers: Scorers, vocab: Vocabulary,
                       grid: Sequence[float] = (0.4, 0.5, 0.6, 0.7), p: float = 0.6,
                       seed: int = 0) -> tuple[float, dict[float, float]]:
    """Pick the nucleus temperature with the best dev AGG."""
    from .decode import DecodeConfig, direction_domains, transfer

    _, target = direction_domains(direction)
    results = {}
    for t in grid:
        out = transfer(model, dev_seqs, direction, DecodeConfig("nucleus", p=p, temperature=t, seed=seed), vocab)
        rep = evaluate_system([s.raw_text for s in dev_seqs], [o.raw_text for o in out], target, scorers)
        results[t] = rep.AGG
    best = max(grid, key=lambda t: (results[t], -t))
    return best, results
