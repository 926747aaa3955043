"""Greedy and nucleus decoding, and the cross-domain transfer pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import BOS, EOS, PAD, Domain, TokenSequence, Vocabulary, decode_tokens, pad_sequences
from .netcore import DCTModel

SRC2TGT, TGT2SRC = "src2tgt", "tgt2src"
TEMPERATURE_GRID = (0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "greedy"
    p: float = 0.6
    temperature: float = 1.0
    max_decode_len: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "nucleus"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")


def nucleus_distribution(logits: np.ndarray, p: float, temperature: float = 1.0) -> np.ndarray:
    """Renormalized probabilities over the smallest top prefix holding mass >= p."""
    logits = np.asarray(logits, dtype=np.float64) / temperature
    probs = np.exp(logits - np.max(logits))
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")  # equal probabilities: lower id first
    cum = np.cumsum(probs[order])
    cut = min(int(np.searchsorted(cum, p, side="left")), len(cum) - 1)
    keep = order[: cut + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep] / probs[keep].sum()
    return out


def nucleus_sample_step(logits: np.ndarray, p: float, temperature: float, rng: np.random.Generator) -> int:
    dist = nucleus_distribution(logits, p, temperature)
    support = np.flatnonzero(dist)
    cum = np.cumsum(dist[support])
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(support[min(k, len(support) - 1)])


def _banned_mask(vocab_size: int, device) -> torch.Tensor:
    mask = torch.zeros(vocab_size, dtype=torch.bool, device=device)
    mask[[PAD, BOS]] = True
    return mask


@torch.no_grad()
def decode_latents(model: DCTModel, latent: torch.Tensor, domain: Domain, cfg: DecodeConfig,
                   vocab: Vocabulary | None = None, rng: np.random.Generator | None = None) -> list[TokenSequence]:
    """Decode each latent row with ``domain``'s decoder until EOS or ``max_decode_len``.

    PAD and BOS are never emitted.
    """
    decoder = model.decoder(domain)
    emb = model.encoder.embedding
    b = latent.shape[0]
    state = decoder.initial_state(latent)
    tokens = torch.full((b,), BOS, dtype=torch.long, device=latent.device)
    banned = _banned_mask(model.dims.vocab_size, latent.device)
    if cfg.strategy == "nucleus" and rng is None:
        rng = np.random.default_rng(cfg.seed)
    outputs: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    for _ in range(cfg.max_decode_len):
        logits, state = decoder.step(tokens, state, emb)
        logits = logits.masked_fill(banned, float("-inf"))
        if cfg.strategy == "greedy":
            nxt = logits.argmax(dim=-1)  # first maximum, i.e. lowest id on ties
        else:
            rows = logits.double().cpu().numpy()
            nxt = torch.as_tensor([nucleus_sample_step(r, cfg.p, cfg.temperature, rng) for r in rows],
                                  device=latent.device)
        for i, tok in enumerate(nxt.tolist()):
            if done[i]:
                continue
            if tok == EOS:
                done[i] = True
            else:
                outputs[i].append(tok)
        if done.all():
            break
        tokens = nxt
    seqs = []
    for toks in outputs:
        text = decode_tokens(toks, vocab) if vocab is not None else ""
        seqs.append(TokenSequence(tuple(toks), Domain(domain), text))
    return seqs


def greedy_decode(model: DCTModel, latent: torch.Tensor, domain: Domain, max_decode_len: int = 30,
                  vocab: Vocabulary | None = None) -> list[TokenSequence]:
    return decode_latents(model, latent, domain, DecodeConfig("greedy", max_decode_len=max_decode_len), vocab)


def direction_domains(direction: str) -> tuple[Domain, Domain]:
    if direction == SRC2TGT:
        return Domain.SOURCE, Domain.TARGET
    if direction == TGT2SRC:
        return Domain.TARGET, Domain.SOURCE
    raise ValueError(f"unknown direction {direction!r}")


@torch.no_grad()
def transfer(model: DCTModel, seqs: Sequence[TokenSequence], direction: str, cfg: DecodeConfig,
             vocab: Vocabulary | None = None, batch_size: int = 256) -> list[TokenSequence]:
    """Encode with the shared encoder and decode with the opposite domain's decoder."""
    _, target = direction_domains(direction)
    if vocab is not None and vocab.size != model.dims.vocab_size:
        raise ValueError(f"vocabulary has {vocab.size} entries, model expects {model.dims.vocab_size}")
    model.eval()
    rng = np.random.default_rng(cfg.seed)
    out: list[TokenSequence] = []
    for start in range(0, len(seqs), batch_size):
        batch = pad_sequences(seqs[start:start + batch_size])
        out.extend(decode_latents(model, model.encode(batch), target, cfg, vocab, rng))
    return out
