"""Tied recurrent encoder, two decoders, latent critic and constraint classifier."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

from .constraints import PROFILE_DIM
from .corpus import BOS, EOS, PAD, Domain, PaddedBatch

CHECKPOINT_HEADER = "DCT-CKPT-1"
LEAK = 0.2


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int = 300
    hidden_dim: int = 300
    critic_hidden: int = 100
    classifier_hidden: int = 100
    num_labels: int = PROFILE_DIM


def _orthogonal_gates(weight: torch.Tensor, gen: torch.Generator) -> None:
    # LSTM weights stack 4 gate blocks along dim 0; each block gets its own orthogonal init
    for block in weight.data.chunk(4, dim=0):
        nn.init.orthogonal_(block, generator=gen)


def _as_tensor(batch: PaddedBatch, device) -> tuple[torch.Tensor, torch.Tensor]:
    return (torch.as_tensor(batch.ids, dtype=torch.long, device=device),
            torch.as_tensor(batch.lengths, dtype=torch.long, device=device))


class Encoder(nn.Module):
    """One-layer LSTM; the latent code is the hidden state at the last real token."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.embedding = nn.Embedding(dims.vocab_size, dims.embed_dim)
        self.rnn = nn.LSTM(dims.embed_dim, dims.hidden_dim, num_layers=1, batch_first=True)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        out, _ = self.rnn(self.embedding(ids))
        last = (lengths - 1).clamp(min=0)
        return out[torch.arange(out.shape[0], device=out.device), last]


class Decoder(nn.Module):
    """LSTM language model whose initial hidden state is the latent code.

    Input embeddings are borrowed from the encoder; the output projection is
    owned by the decoder.
    """

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.rnn = nn.LSTM(dims.embed_dim, dims.hidden_dim, num_layers=1, batch_first=True)
        self.out = nn.Linear(dims.hidden_dim, dims.vocab_size)

    def initial_state(self, latent: torch.Tensor):
        h0 = latent.unsqueeze(0).contiguous()
        return h0, torch.zeros_like(h0)

    def forward(self, latent: torch.Tensor, inputs: torch.Tensor, embedding: nn.Embedding) -> torch.Tensor:
        out, _ = self.rnn(embedding(inputs), self.initial_state(latent))
        return self.out(out)

    def step(self, tokens: torch.Tensor, state, embedding: nn.Embedding):
        out, state = self.rnn(embedding(tokens).unsqueeze(1), state)
        return self.out(out[:, 0]), state


class Critic(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.hidden = nn.Linear(dims.hidden_dim, dims.critic_hidden)
        self.act = nn.LeakyReLU(LEAK)
        self.score = nn.Linear(dims.critic_hidden, 1)

    def forward(self, latent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hid = self.act(self.hidden(latent))
        return self.score(hid).squeeze(-1), hid


class ConstraintClassifier(nn.Module):
    """Two-layer head predicting the flattened constraint profile.

    Encoder latents (width ``hidden_dim``) and critic activations (width
    ``critic_hidden``) enter through separate first layers and share the
    output layer.
    """

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.from_encoder = nn.Linear(dims.hidden_dim, dims.classifier_hidden)
        self.from_critic = nn.Linear(dims.critic_hidden, dims.classifier_hidden)
        self.act = nn.LeakyReLU(LEAK)
        self.out = nn.Linear(dims.classifier_hidden, dims.num_labels)

    def forward(self, rep: torch.Tensor, source: str = "encoder") -> torch.Tensor:
        layer = {"encoder": self.from_encoder, "critic": self.from_critic}[source]
        if rep.dim() != 2 or rep.shape[1] != layer.in_features:
            raise ValueError(f"classifier {source} head expects width {layer.in_features}, got {tuple(rep.shape)}")
        return self.out(self.act(layer(rep)))


class DCTModel(nn.Module):
    """Shared encoder serving both domains, plus one decoder per domain."""

    def __init__(self, dims: ModelDims, seed: int = 0):
        super().__init__()
        self.dims = dims
        self.encoder = Encoder(dims)
        self.decoder_src = Decoder(dims)
        self.decoder_tgt = Decoder(dims)
        self.critic = Critic(dims)
        self.classifier = ConstraintClassifier(dims)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                # draw in float32 whatever the default dtype, so a seed means one initialization
                w = torch.empty(p.shape, dtype=torch.float32)
                if name.endswith("embedding.weight"):
                    nn.init.uniform_(w, -0.1, 0.1, generator=gen)
                elif ".rnn.weight" in name:
                    _orthogonal_gates(w, gen)
                elif name.endswith("bias") or ".rnn.bias" in name:
                    nn.init.zeros_(w)
                else:
                    nn.init.kaiming_uniform_(w, a=LEAK, generator=gen)
                p.copy_(w)

    @property
    def device(self):
        return next(self.parameters()).device

    def decoder(self, domain: Domain) -> Decoder:
        return self.decoder_src if Domain(domain) == Domain.SOURCE else self.decoder_tgt

    # enc_theta and enc_psi are the same module
    def encode(self, batch: PaddedBatch) -> torch.Tensor:
        ids, lengths = _as_tensor(batch, self.device)
        return self.encoder(ids, lengths)

    def decode_teacher_forced(self, latent: torch.Tensor, gold: PaddedBatch, domain: Domain) -> torch.Tensor:
        """Logits ``[B, T + 1, V]``: step ``t`` predicts gold token ``t`` (EOS at ``lengths[i]``)."""
        ids, _ = _as_tensor(gold, self.device)
        bos = torch.full((ids.shape[0], 1), BOS, dtype=torch.long, device=ids.device)
        return self.decoder(domain)(latent, torch.cat([bos, ids], dim=1), self.encoder.embedding)

    def critic_forward(self, latent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.critic(latent)

    def classify_constraints(self, rep: torch.Tensor, source: str = "encoder") -> torch.Tensor:
        return self.classifier(rep, source)

    def autoencoder_parameters(self):
        return [*self.encoder.parameters(), *self.decoder_src.parameters(), *self.decoder_tgt.parameters()]

    def critic_side_parameters(self):
        return [*self.critic.parameters(), *self.classifier.parameters()]


def decoder_targets(gold: PaddedBatch) -> np.ndarray:
    """Gold ids followed by EOS, PAD-filled, shape ``[B, T + 1]``."""
    b, t = gold.ids.shape
    out = np.full((b, t + 1), PAD, dtype=np.int64)
    out[:, :t] = gold.ids
    out[np.arange(b), gold.lengths] = EOS
    return out


def _atomic_torch_save(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, model: DCTModel, config: dict, vocab_tokens: list[str],
                    state: dict[str, Any] | None = None) -> None:
    """Write a checkpoint atomically; a failed write leaves any previous file intact."""
    payload = {
        "header": CHECKPOINT_HEADER,
        "dims": json.dumps(model.dims.__dict__),
        "params": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "config": json.dumps(config, sort_keys=True),
        "vocab": list(vocab_tokens),
        "state": state or {},
    }
    _atomic_torch_save(payload, Path(path))


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("header") != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a {CHECKPOINT_HEADER} checkpoint")
    dims = ModelDims(**json.loads(payload["dims"]))
    model = DCTModel(dims)
    model.load_state_dict(payload["params"])
    payload["model"] = model
    payload["config"] = json.loads(payload["config"])
    return payload
