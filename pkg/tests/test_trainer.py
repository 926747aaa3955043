import math

import numpy as np
import pytest
import torch

from coopdct import losses, synthetic
from coopdct.constraints import profile_corpus
from coopdct.corpus import Domain, encode_corpus, vocabulary_from_sentences
from coopdct.netcore import load_checkpoint
from coopdct.trainer import (METRIC_FIELDS, TrainConfig, TrainingError, TrainState, frozen, read_config,
                             read_metrics, train, train_iteration, write_config)

TINY = dict(embed_dim=8, hidden_dim=8, critic_hidden=6, classifier_hidden=5, batch_size=8, max_vocab=60)


def make_data():
    src, tgt = synthetic.generate_corpora(synthetic.SyntheticSpec(60, 0.7, 0.3, 0.6, 0.4), seed=0)
    vocab = vocabulary_from_sentences(src + tgt, 60)
    corpora = {Domain.SOURCE: encode_corpus(src, vocab, Domain.SOURCE),
               Domain.TARGET: encode_corpus(tgt, vocab, Domain.TARGET)}
    lex = synthetic.lexicons()
    profiles = {d: profile_corpus(corpora[d], lex) for d in corpora}
    return vocab, corpora, profiles


@pytest.fixture(scope="module")
def data():
    return make_data()


def _state(data, **kw):
    vocab, corpora, profiles = data
    return TrainState(TrainConfig(**{**TINY, **kw}), corpora, profiles, vocab.size)


def _groups(model):
    return {"ae": [*model.encoder.parameters(), *model.decoder_src.parameters(), *model.decoder_tgt.parameters()],
            "critic": list(model.critic.parameters()), "classifier": list(model.classifier.parameters())}


class StepRecorder:
    """Wraps both optimizers; logs which parameter groups each step changed."""

    def __init__(self, state):
        self.log = []
        self.grads = set()
        groups = _groups(state.model)
        named = {id(p): n for n, p in state.model.named_parameters()}
        for name in ("opt_ae", "opt_crc"):
            opt = getattr(state, name)
            inner = opt.step

            def step(*a, _inner=inner, _name=name, **k):
                before = {g: [p.detach().clone() for p in ps] for g, ps in groups.items()}
                for p in state.model.parameters():
                    if p.grad is not None and p.grad.abs().max() > 0:
                        self.grads.add(named[id(p)])
                out = _inner(*a, **k)
                changed = {g for g, ps in groups.items()
                           if any(not torch.equal(b, p) for b, p in zip(before[g], ps))}
                self.log.append((_name, changed))
                return out
            opt.step = step


def _phase_labels(n_dis, coop):
    labels = ["1"] + ["2"] * n_dis + ["3"]
    return labels + (["3a-ae", "3a-crc"] if coop else [])


@pytest.mark.parametrize("lam", [(0.0, 0.0), (1.0, 1.0)])
def test_phase_isolation(data, lam):
    state = _state(data, lambda_con=lam[0], lambda_clf=lam[1])
    rec = StepRecorder(state)
    coop = any(lam)
    for _ in range(10):
        train_iteration(state)
    labels = _phase_labels(5, coop) * 10
    assert [o for o, _ in rec.log] == [
        {"1": "opt_ae", "2": "opt_crc", "3": "opt_ae", "3a-ae": "opt_ae", "3a-crc": "opt_crc"}[x] for x in labels]
    for label, (_, changed) in zip(labels, rec.log):
        if label == "2":
            assert "ae" not in changed
            assert "critic" in changed
        else:
            assert "critic" not in changed, label
        if label == "3a-crc":
            assert changed == {"classifier"}


def test_critic_steps_per_iteration(data):
    for n_dis in (5, 2):
        state = _state(data, n_dis=n_dis, lambda_clf=1.0)
        rec = StepRecorder(state)
        train_iteration(state)
        assert sum("critic" in changed for _, changed in rec.log) == n_dis
    assert TrainConfig().n_dis == 5


def test_gradient_coverage(data):
    state = _state(data, lambda_con=1.0, lambda_clf=1.0)
    rec = StepRecorder(state)
    train_iteration(state)
    # the critic's output bias cancels between the real and fake means, so its gradient is exactly zero
    assert rec.grads == {n for n, _ in state.model.named_parameters()} - {"critic.score.bias"}


def test_critic_frozen_context(data):
    state = _state(data)
    with frozen(state.model.critic):
        assert not any(p.requires_grad for p in state.model.critic.parameters())
    assert all(p.requires_grad for p in state.model.critic.parameters())


def _reference_run(state, iterations):
    """Algorithm 1 without any co-op code, driven by the same data and RNG streams."""
    m = state.model
    for _ in range(iterations):
        xs, _, xt, _ = state.sample()
        state.opt_ae.zero_grad(set_to_none=True)
        zs, zt = m.encode(xs), m.encode(xt)
        loss = (losses.loss_autoencoder(m.decode_teacher_forced(zs, xs, Domain.SOURCE), xs)
                + losses.loss_autoencoder(m.decode_teacher_forced(zt, xt, Domain.TARGET), xt))
        loss.backward()
        torch.nn.utils.clip_grad_norm_(m.autoencoder_parameters(), 5.0)
        state.opt_ae.step()
        for _ in range(5):
            xs, _, xt, _ = state.sample()
            with torch.no_grad():
                zs, zt = m.encode(xs), m.encode(xt)
            state.opt_crc.zero_grad(set_to_none=True)
            loss = losses.loss_critic(m.critic(zs)[0], m.critic(zt)[0])
            loss = loss + 10.0 * losses.gradient_penalty(zs, zt, m.critic, rng=state.gp_gen)
            loss.backward()
            state.opt_crc.step()
        xs, _, xt, _ = state.sample()
        state.opt_ae.zero_grad(set_to_none=True)
        for p in m.critic.parameters():
            p.requires_grad_(False)
        losses.loss_adversarial(m.critic(m.encode(xs))[0], m.critic(m.encode(xt))[0]).backward()
        for p in m.critic.parameters():
            p.requires_grad_(True)
        state.opt_ae.step()


def test_zero_lambda_matches_golden_trajectory(data):
    ours = _state(data, seed=3)
    ref = _state(data, seed=3)
    for _ in range(10):
        train_iteration(ours)
    _reference_run(ref, 10)
    for (n, p), (_, q) in zip(ours.model.named_parameters(), ref.model.named_parameters()):
        assert torch.equal(p, q), n
    coop = _state(data, seed=3, lambda_clf=1.0)
    for _ in range(10):
        train_iteration(coop)
    assert not torch.equal(coop.model.encoder.rnn.weight_hh_l0, ours.model.encoder.rnn.weight_hh_l0)


def test_metric_record(data):
    state = _state(data)
    m = train_iteration(state)
    assert tuple(m) == METRIC_FIELDS and m["iter"] == 1
    assert all(math.isfinite(v) for v in m.values())
    assert m["l_con_crc"] == m["l_clf_enc"] == 0.0 and m["gp"] > 0


def test_determinism(data, tmp_path):
    vocab, corpora, profiles = data
    cfg = TrainConfig(**TINY, iterations=6, checkpoint_every=0, lambda_con=1.0, lambda_clf=1.0)
    for d in ("a", "b"):
        train(cfg, corpora, vocab.id_to_token, tmp_path / d, profiles)
    assert (tmp_path / "a" / "metrics.log").read_bytes() == (tmp_path / "b" / "metrics.log").read_bytes()


def test_zero_epochs_only_final(data, tmp_path):
    vocab, corpora, profiles = data
    train(TrainConfig(**TINY, epochs=0), corpora, vocab.id_to_token, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["config.cfg", "final.pt", "metrics.log"]
    assert read_metrics(tmp_path / "metrics.log") == []
    assert load_checkpoint(tmp_path / "final.pt")["state"]["final"]


def test_resume_continues_stream(data, tmp_path):
    vocab, corpora, profiles = data
    cfg = TrainConfig(**TINY, iterations=4, checkpoint_every=2, lambda_clf=1.0)
    full = train(cfg, corpora, vocab.id_to_token, tmp_path / "full", profiles)
    assert (tmp_path / "full" / "ckpt_0000002.pt").exists()
    resumed = train(cfg, corpora, vocab.id_to_token, tmp_path / "res", profiles,
                    resume=tmp_path / "full" / "ckpt_0000002.pt")
    a = read_metrics(tmp_path / "full" / "metrics.log")
    b = read_metrics(tmp_path / "res" / "metrics.log")
    assert [r["iter"] for r in b] == [3, 4]
    assert b == a[2:]
    for p, q in zip(full.model.parameters(), resumed.model.parameters()):
        assert torch.equal(p, q)


def test_epoch_budget(data):
    cfg = TrainConfig(**TINY, epochs=2)
    assert cfg.total_iterations(60, 60) == 2 * math.ceil(60 / 8)
    assert TrainConfig(**TINY, epochs=2, iterations=5).total_iterations(60, 60) == 5


def test_smoke_run_reconstruction_improves():
    src, tgt = synthetic.generate_corpora(synthetic.SyntheticSpec(100), seed=0)
    vocab = vocabulary_from_sentences(src + tgt, 50)
    corpora = {Domain.SOURCE: encode_corpus(src, vocab, Domain.SOURCE),
               Domain.TARGET: encode_corpus(tgt, vocab, Domain.TARGET)}
    assert vocab.size == 50 and sum(map(len, corpora.values())) == 200
    state = TrainState(TrainConfig(embed_dim=16, hidden_dim=16, batch_size=16), corpora, None, vocab.size)
    trace = [train_iteration(state)["l_ae"] for _ in range(200)]
    assert np.mean(trace[-50:]) < np.mean(trace[:50])


def test_nan_aborts_with_phase(data, monkeypatch):
    state = _state(data)
    monkeypatch.setattr(losses, "loss_critic", lambda r, f: torch.tensor(float("nan")))
    with pytest.raises(TrainingError, match=r"iteration 1, phase 2-critic"):
        train_iteration(state)


def test_nan_in_autoencoder(data, monkeypatch):
    state = _state(data)
    train_iteration(state)
    monkeypatch.setattr(losses, "loss_autoencoder", lambda lg, g: torch.tensor(float("inf"), requires_grad=True))
    with pytest.raises(TrainingError, match=r"iteration 2, phase 1-autoencoder"):
        train_iteration(state)


def test_disk_failure_keeps_last_checkpoint(data, tmp_path, monkeypatch):
    vocab, corpora, _ = data
    cfg = TrainConfig(**TINY, iterations=6, checkpoint_every=2)
    import coopdct.netcore as netcore
    real = netcore.torch.save
    calls = {"n": 0}

    def flaky(obj, path, *a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise OSError("no space left on device")
        return real(obj, path, *a, **k)
    monkeypatch.setattr(netcore.torch, "save", flaky)
    with pytest.raises(TrainingError, match="iteration 4"):
        train(cfg, corpora, vocab.id_to_token, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.pt")) == ["ckpt_0000002.pt"]
    assert load_checkpoint(tmp_path / "ckpt_0000002.pt")["state"]["iteration"] == 2


def test_config_round_trip_and_rejection(tmp_path):
    cfg = TrainConfig(lambda_clf=1.0, positives_per_domain=True, seed=9)
    write_config(tmp_path / "c.cfg", cfg)
    assert read_config(tmp_path / "c.cfg") == cfg
    (tmp_path / "bad.cfg").write_text("seed = 1\nmystery = 2\n")
    with pytest.raises(ValueError, match="mystery"):
        read_config(tmp_path / "bad.cfg")
    (tmp_path / "c2.cfg").write_text("# comment\nlr_ae = 0.01  # inline\nn_dis = 3\ncontrastive_normalize = yes\n")
    c2 = read_config(tmp_path / "c2.cfg")
    assert (c2.lr_ae, c2.n_dis, c2.contrastive_normalize) == (0.01, 3, True)


def test_config_invariants():
    d = TrainConfig()
    assert (d.lr_ae, d.lr_disc, d.n_dis, d.adam_beta1, d.adam_beta2, d.gp_weight, d.num_positives) == \
        (1e-3, 1e-4, 5, 0.5, 0.9, 10.0, 2)
    for bad in (dict(lr_ae=0), dict(lr_disc=-1), dict(n_dis=0), dict(lambda_clf=-1.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_coop_needs_profiles(data):
    vocab, corpora, _ = data
    with pytest.raises(TrainingError, match="profiles"):
        TrainState(TrainConfig(**TINY, lambda_clf=1.0), corpora, None, vocab.size)


def _phase3_grads(state):
    """Encoder gradients as seen by the second autoencoder step (phase 3)."""
    seen = []
    inner = state.opt_ae.step

    def step(*a, **k):
        seen.append([p.grad.clone() if p.grad is not None else None for p in state.model.encoder.parameters()])
        return inner(*a, **k)
    state.opt_ae.step = step
    m = train_iteration(state)
    return m, seen[1]


def test_adv_grad_scale(data):
    m1, g1 = _phase3_grads(_state(data, seed=4))
    m2, g2 = _phase3_grads(_state(data, seed=4, adv_grad_scale=0.25))
    assert m1["l_adv"] == m2["l_adv"]
    for a, b in zip(g1, g2):
        torch.testing.assert_close(b, 0.25 * a, rtol=1e-5, atol=1e-9)
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            TrainConfig(adv_grad_scale=bad)
