"""Training loop: autoencoder, critic (+co-op), adversarial (+co-op) phases."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import losses
from .constraints import ConstraintProfile, profiles_to_targets
from .corpus import BatchSampler, Domain, TokenSequence
from .mining import MiningStats, ProfileIndex, sample_contrastive_batch
from .netcore import DCTModel, ModelDims, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("iter", "l_ae", "l_crc", "l_adv", "l_con_crc", "l_clf_crc", "l_con_enc", "l_clf_enc", "gp")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_ae: float = 1e-3
    lr_disc: float = 1e-4
    n_dis: int = 5
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 64
    epochs: int = 1
    # overrides epochs when > 0
    iterations: int = 0
    lambda_con: float = 0.0
    lambda_clf: float = 0.0
    gp_weight: float = 10.0
    # multiplies the adversarial gradient reaching the encoder (the logged L_adv is unscaled)
    adv_grad_scale: float = 1.0
    num_positives: int = 2
    positives_per_domain: bool = False
    contrastive_variant: str = "literal"
    contrastive_normalize: bool = False
    contrastive_temperature: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    grad_clip: float = 5.0
    embed_dim: int = 300
    hidden_dim: int = 300
    critic_hidden: int = 100
    classifier_hidden: int = 100
    max_len: int = 30
    max_vocab: int = 30000

    def __post_init__(self):
        if self.lr_ae <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.n_dis < 1:
            raise ValueError("n_dis must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.adv_grad_scale > 0:
            raise ValueError("adv_grad_scale must be positive")
        self.weights  # validates the lambdas

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_con, self.lambda_clf, self.gp_weight)

    def dims(self, vocab_size: int) -> ModelDims:
        return ModelDims(vocab_size, self.embed_dim, self.hidden_dim, self.critic_hidden, self.classifier_hidden)

    def total_iterations(self, n_src: int, n_tgt: int) -> int:
        if self.iterations > 0:
            return self.iterations
        return self.epochs * math.ceil(max(n_src, n_tgt) / self.batch_size)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    def with_overrides(self, **values) -> "TrainConfig":
        merged = self.as_dict()
        merged.update(values)
        return TrainConfig.from_dict(merged)


def _coerce(f: dataclasses.Field, value):
    if not isinstance(value, str):
        return value
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if kind == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: not a boolean: {value!r}")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def read_config(path: str | Path) -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return TrainConfig.from_dict(values)


def write_config(path: str | Path, config: TrainConfig) -> None:
    lines = [f"{k} = {v}" for k, v in config.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@contextmanager
def frozen(module: torch.nn.Module):
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


class TrainState:
    """Model, both optimizers, data streams and RNGs for one run."""

    def __init__(self, config: TrainConfig, corpora: dict[Domain, Sequence[TokenSequence]],
                 profiles: dict[Domain, Sequence[ConstraintProfile]] | None, vocab_size: int,
                 index: ProfileIndex | None = None, dtype: torch.dtype = torch.float32):
        self.config = config
        self.corpora = corpora
        self.model = DCTModel(config.dims(vocab_size), seed=config.seed).to(dtype)
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_ae = torch.optim.Adam(self.model.autoencoder_parameters(), lr=config.lr_ae, betas=betas)
        self.opt_crc = torch.optim.Adam(self.model.critic_side_parameters(), lr=config.lr_disc, betas=betas)
        self.samplers = {
            d: BatchSampler(corpora[d], config.batch_size, np.random.default_rng([config.seed, int(d)]))
            for d in (Domain.SOURCE, Domain.TARGET)
        }
        self.coop_rng = np.random.default_rng([config.seed, 2])
        self.gp_gen = torch.Generator().manual_seed(config.seed)
        self.iteration = 0
        self.mining_stats = MiningStats()
        weights = config.weights
        if weights.lambda_clf and profiles is None:
            raise TrainingError("classification loss needs constraint profiles")
        if weights.lambda_con and index is None:
            if profiles is None:
                raise TrainingError("contrastive loss needs constraint profiles")
            index = ProfileIndex(profiles)
        self.index = index
        self.targets = None
        if profiles is not None:
            self.targets = {d: torch.as_tensor(profiles_to_targets(profiles[d]), dtype=dtype) for d in profiles}

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    def sample(self):
        (xs, ixs), (xt, ixt) = (self.samplers[d].next_batch() for d in (Domain.SOURCE, Domain.TARGET))
        return xs, ixs, xt, ixt

    def constraint_targets(self, ixs, ixt) -> torch.Tensor:
        return torch.cat([self.targets[Domain.SOURCE][ixs], self.targets[Domain.TARGET][ixt]])

    def contrastive_batch(self):
        cfg = self.config
        return sample_contrastive_batch(self.index, self.corpora, cfg.batch_size, cfg.num_positives,
                                        self.coop_rng, cfg.positives_per_domain, self.mining_stats)

    def contrastive_loss(self, reps, cb) -> torch.Tensor:
        cfg = self.config
        return losses.loss_contrastive(reps, cb.positives, cb.anchors, normalize=cfg.contrastive_normalize,
                                       temperature=cfg.contrastive_temperature, variant=cfg.contrastive_variant)

    # -- persistence -------------------------------------------------------
    def export_state(self) -> dict:
        samplers = {}
        for d, s in self.samplers.items():
            samplers[str(int(d))] = {
                "rng": json.dumps(s.rng.bit_generator.state),
                "order": torch.as_tensor(s._order, dtype=torch.long),
                "pos": s._pos,
                "epoch": s.epoch,
            }
        return {
            "iteration": self.iteration,
            "opt_ae": self.opt_ae.state_dict(),
            "opt_crc": self.opt_crc.state_dict(),
            "samplers": samplers,
            "coop_rng": json.dumps(self.coop_rng.bit_generator.state),
            "gp_gen": self.gp_gen.get_state(),
        }

    def import_state(self, payload: dict) -> None:
        self.model.load_state_dict(payload["params"])
        st = payload["state"]
        self.iteration = int(st["iteration"])
        self.opt_ae.load_state_dict(st["opt_ae"])
        self.opt_crc.load_state_dict(st["opt_crc"])
        for key, s in st["samplers"].items():
            sampler = self.samplers[Domain(int(key))]
            sampler.rng.bit_generator.state = json.loads(s["rng"])
            sampler._order = s["order"].numpy().astype(np.int64)
            sampler._pos = int(s["pos"])
            sampler.epoch = int(s["epoch"])
        self.coop_rng.bit_generator.state = json.loads(st["coop_rng"])
        self.gp_gen.set_state(st["gp_gen"])


def _check(value: torch.Tensor, iteration: int, phase: str) -> float:
    v = float(value.detach())
    if not math.isfinite(v):
        raise TrainingError(f"non-finite loss at iteration {iteration}, phase {phase}")
    return v


def train_iteration(state: TrainState) -> dict[str, float]:
    """One pass of the five phases; returns the metric record."""
    cfg, model = state.config, state.model
    w = cfg.weights
    it = state.iteration + 1
    m = dict.fromkeys(METRIC_FIELDS, 0.0)
    m["iter"] = it

    # 1) autoencoders
    xs, ixs, xt, ixt = state.sample()
    state.opt_ae.zero_grad(set_to_none=True)
    zs, zt = model.encode(xs), model.encode(xt)
    l_ae = (losses.loss_autoencoder(model.decode_teacher_forced(zs, xs, Domain.SOURCE), xs)
            + losses.loss_autoencoder(model.decode_teacher_forced(zt, xt, Domain.TARGET), xt))
    m["l_ae"] = _check(l_ae, it, "1-autoencoder")
    l_ae.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.autoencoder_parameters(), cfg.grad_clip)
    state.opt_ae.step()

    # 2) critic, 2a) critic co-op
    for _ in range(cfg.n_dis):
        xs, ixs, xt, ixt = state.sample()
        with torch.no_grad():
            zs, zt = model.encode(xs), model.encode(xt)
        state.opt_crc.zero_grad(set_to_none=True)
        sr, hs = model.critic_forward(zs)
        sf, ht = model.critic_forward(zt)
        l_crc = losses.loss_critic(sr, sf)
        m["l_crc"] += _check(l_crc, it, "2-critic") / cfg.n_dis
        total = l_crc
        if w.gp_weight:
            gp = losses.gradient_penalty(zs, zt, model.critic, rng=state.gp_gen)
            m["gp"] += _check(gp, it, "2-gradient-penalty") / cfg.n_dis
            total = total + w.gp_weight * gp
        if w.lambda_con:
            cb = state.contrastive_batch()
            with torch.no_grad():
                zc = model.encode(cb.batch)
            _, hc = model.critic_forward(zc)
            l_con = state.contrastive_loss(hc, cb)
            m["l_con_crc"] += _check(l_con, it, "2a-contrastive") / cfg.n_dis
            total = total + w.lambda_con * l_con
        if w.lambda_clf:
            logits = model.classify_constraints(torch.cat([hs, ht]), "critic")
            l_clf = losses.loss_classification(logits, state.constraint_targets(ixs, ixt))
            m["l_clf_crc"] += _check(l_clf, it, "2a-classification") / cfg.n_dis
            total = total + w.lambda_clf * l_clf
        total.backward()
        state.opt_crc.step()

    # 3) adversarial
    xs, ixs, xt, ixt = state.sample()
    state.opt_ae.zero_grad(set_to_none=True)
    with frozen(model.critic):
        sr, _ = model.critic_forward(model.encode(xs))
        sf, _ = model.critic_forward(model.encode(xt))
        l_adv = losses.loss_adversarial(sr, sf)
        m["l_adv"] = _check(l_adv, it, "3-adversarial")
        (cfg.adv_grad_scale * l_adv).backward()
    state.opt_ae.step()

    # 3a) encoder co-op; the critic is not part of this graph
    if w.cooperative:
        state.opt_ae.zero_grad(set_to_none=True)
        state.opt_crc.zero_grad(set_to_none=True)
        total = 0.0
        if w.lambda_con:
            cb = state.contrastive_batch()
            l_con = state.contrastive_loss(model.encode(cb.batch), cb)
            m["l_con_enc"] = _check(l_con, it, "3a-contrastive")
            total = total + w.lambda_con * l_con
        if w.lambda_clf:
            logits = model.classify_constraints(torch.cat([model.encode(xs), model.encode(xt)]), "encoder")
            l_clf = losses.loss_classification(logits, state.constraint_targets(ixs, ixt))
            m["l_clf_enc"] = _check(l_clf, it, "3a-classification")
            total = total + w.lambda_clf * l_clf
        total.backward()
        state.opt_ae.step()
        state.opt_crc.step()  # only classifier parameters carry gradients here

    state.iteration = it
    return m


def format_metrics(m: dict[str, float]) -> str:
    return "\t".join(str(m["iter"]) if k == "iter" else repr(float(m[k])) for k in METRIC_FIELDS)


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out = []
    for line in lines[1:]:
        vals = line.split("\t")
        out.append({k: (int(v) if k == "iter" else float(v)) for k, v in zip(METRIC_FIELDS, vals)})
    return out


def checkpoint_state(state: TrainState, path: Path, vocab_tokens: list[str], final: bool = False) -> None:
    extra = state.export_state()
    extra["final"] = final
    try:
        save_checkpoint(path, state.model, state.config.as_dict(), vocab_tokens, extra)
    except OSError as exc:
        raise TrainingError(f"checkpoint write failed at iteration {state.iteration}: {exc}") from exc


def train(config: TrainConfig, corpora: dict[Domain, Sequence[TokenSequence]], vocab_tokens: list[str],
          out_dir: str | Path, profiles: dict[Domain, Sequence[ConstraintProfile]] | None = None,
          index: ProfileIndex | None = None, resume: str | Path | None = None) -> TrainState:
    """Run ``config``'s iteration budget, writing ``metrics.log`` and checkpoints to ``out_dir``.

    ``vocab_tokens`` is the full id-ordered token list (reserved tokens included).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState(config, corpora, profiles, len(vocab_tokens), index)
    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["vocab"] != list(vocab_tokens):
            raise TrainingError(f"{resume}: vocabulary differs from the training corpus vocabulary")
        state.import_state(payload)
    write_config(out / "config.cfg", config)
    total = config.total_iterations(len(corpora[Domain.SOURCE]), len(corpora[Domain.TARGET]))
    log_path = out / "metrics.log"
    mode = "a" if resume is not None and log_path.exists() else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        if mode == "w":
            log.write("\t".join(METRIC_FIELDS) + "\n")
        while state.iteration < total:
            record = train_iteration(state)
            log.write(format_metrics(record) + "\n")
            if state.iteration % 50 == 0:
                log.flush()
                logger.info("iter %d l_ae %.4f l_crc %.4f l_adv %.4f", state.iteration,
                            record["l_ae"], record["l_crc"], record["l_adv"])
            if config.checkpoint_every > 0 and state.iteration % config.checkpoint_every == 0 \
                    and state.iteration < total:
                checkpoint_state(state, out / f"ckpt_{state.iteration:07d}.pt", vocab_tokens)
    checkpoint_state(state, out / "final.pt", vocab_tokens, final=True)
    return state
