"""Sampler composition, losses, optimizer behaviour, determinism,
checkpoint round-trips and exact resume."""

import math

import numpy as np
import pytest
import torch

from lexadapt.corpus import (
    PairInstance,
    build_regime_pools,
    gen_synthetic,
    make_split,
    partition_docs,
)
from lexadapt.embeddings import toy_encode_corpus
from lexadapt.model import ModelConfig
from lexadapt.training import (
    Adam,
    BalancedPairSampler,
    EncCache,
    FactDocSampler,
    TrainConfig,
    TrainError,
    UnlabeledPairSampler,
    build_fact_instances,
    classifier_loss,
    fit,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train_step,
)

from reference import fd_gradients


TOY = ModelConfig(d_in=16, d_att_token=6, h_gru=4, d_att_sent=4,
                  d_cls_hidden=6, dropout=0.1)


def make_pool(n_articles=6, pos_per_article=5, neg_per_article=5):
    codes = ["2", "3", "5", "6", "8", "9"][:n_articles]
    pool = []
    i = 0
    for d_id, code in enumerate(codes):
        for _ in range(pos_per_article):
            pool.append(PairInstance(f"doc{i}", code, 1, d_id))
            i += 1
        for _ in range(neg_per_article):
            pool.append(PairInstance(f"doc{i}", code, 0, d_id))
            i += 1
    return pool


def synthetic_setup(num_docs=48, num_articles=6, regime="NONE",
                    adaptation="none", seed=0, **config_over):
    docs, articles = gen_synthetic(num_docs, num_articles, 48, 1.0, seed=5)
    store = toy_encode_corpus(docs, articles, TOY.d_in, seed=7)
    codes = tuple(a.id for a in articles)
    if regime == "NONE":
        split = make_split("custom", codes, (), "NONE")
    else:
        split = make_split("custom", codes[:4], codes[4:], regime)
    train_docs, val_docs, _ = partition_docs(docs, 0.25, 0.0, seed=3)
    pools = build_regime_pools(train_docs, articles, "B", split)
    val_split = make_split("custom", split.source_articles,
                           split.target_articles, "NONE")
    val_pool = build_regime_pools(val_docs, articles, "B", val_split).source
    defaults = dict(model=TOY, task="B", adaptation=adaptation, regime=regime,
                    candidate_articles=split.domain_enumeration,
                    max_epochs=3, seed=seed, adversary_hidden=(8, 6))
    defaults.update(config_over)
    config = TrainConfig(**defaults)
    return config, pools, val_pool, store


class TestSamplers:
    def test_batch_composition(self):
        pool = make_pool()
        sampler = BalancedPairSampler(pool, 4, 2, 2, np.random.default_rng(0))
        for _ in range(50):
            batch = sampler.sample()
            assert len(batch) == 16
            articles = {}
            for p in batch:
                articles.setdefault(p.article, []).append(p.label)
            assert len(articles) == 4
            for labels in articles.values():
                assert sorted(labels) == [0, 0, 1, 1]

    def test_scarce_positive_sampled_with_replacement(self):
        pool = make_pool(n_articles=4, pos_per_article=1, neg_per_article=3)
        sampler = BalancedPairSampler(pool, 4, 2, 2, np.random.default_rng(0))
        batch = sampler.sample()
        for code in {p.article for p in batch}:
            positives = [p for p in batch if p.article == code and p.label == 1]
            assert len(positives) == 2
            assert positives[0].doc_ref == positives[1].doc_ref

    def test_too_few_articles_rejected(self):
        pool = make_pool(n_articles=3)
        with pytest.raises(TrainError, match="at least 4"):
            BalancedPairSampler(pool, 4, 2, 2, np.random.default_rng(0))

    def test_article_without_negatives_not_eligible(self):
        pool = make_pool(n_articles=4)
        pool += [PairInstance("x", "10", 1, 9)]  # positives only
        sampler = BalancedPairSampler(pool, 4, 2, 2, np.random.default_rng(0))
        assert "10" not in sampler.articles

    def test_unlabeled_sampler_composition(self):
        pool = [PairInstance(f"d{i}", code, None, j)
                for j, code in enumerate(["10", "11", "14", "P1-1"])
                for i in range(6)]
        sampler = UnlabeledPairSampler(pool, 4, 16, np.random.default_rng(0))
        batch = sampler.sample()
        assert len(batch) == 16
        counts = {}
        for p in batch:
            counts[p.article] = counts.get(p.article, 0) + 1
        assert len(counts) == 4
        assert all(c == 4 for c in counts.values())

    def test_fact_sampler_covers_epoch_without_replacement(self):
        pool = build_fact_instances(
            [make_docs(i) for i in range(8)], "B", ("2", "3"))
        sampler = FactDocSampler(pool, 4, np.random.default_rng(0))
        seen = [b.doc_ref for _ in range(2) for b in sampler.sample()]
        assert sorted(seen) == sorted(p.doc_ref for p in pool)


def make_docs(i):
    from conftest import make_doc
    return make_doc(doc_id=f"fd{i}", alleged={"2"} if i % 2 else set())


class TestClassifierLoss:
    def test_half_probability_gives_ln2(self):
        loss = classifier_loss(torch.tensor([0.5]), torch.tensor([1.0]))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-7)

    def test_perfect_prediction_is_epsilon_bounded(self):
        loss = classifier_loss(torch.tensor([1.0]), torch.tensor([1.0]))
        assert 0.0 <= float(loss) <= -math.log(1e-7) * 1e-6 + 1e-6

    def test_hand_computed_batch_mean(self):
        probs = torch.tensor([0.8, 0.3])
        targets = torch.tensor([1.0, 0.0])
        expected = (-math.log(0.8) - math.log(0.7)) / 2
        assert float(classifier_loss(probs, targets)) == pytest.approx(
            expected, abs=1e-6)

    def test_loss_bounded_by_epsilon_floor(self):
        loss = classifier_loss(torch.tensor([0.0]), torch.tensor([1.0]))
        assert float(loss) <= -math.log(1e-7) + 1e-6

    def test_multihot_means_over_outputs(self):
        probs = torch.tensor([[0.8, 0.3], [0.6, 0.9]])
        targets = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        expected = np.mean([-math.log(0.8), -math.log(0.7),
                            -math.log(0.4), -math.log(0.9)])
        assert float(classifier_loss(probs, targets)) == pytest.approx(
            expected, abs=1e-6)


class TestAdam:
    def test_first_step_moves_against_gradient_sign(self):
        torch.manual_seed(0)
        params = [("w", torch.randn(4, 3, requires_grad=True)),
                  ("b", torch.randn(3, requires_grad=True))]
        adam = Adam(params, lr=1e-3)
        loss = (params[0][1] ** 2).sum() + (params[1][1] * 2).sum()
        before = [p.detach().clone() for _, p in params]
        loss.backward()
        grads = [p.grad.clone() for _, p in params]
        adam.step()
        for (_, p), b, g in zip(params, before, grads):
            moved = (p.detach() - b)[g.abs() > 1e-12]
            signs = g[g.abs() > 1e-12]
            assert ((moved * signs) < 0).all()

    def test_none_grad_parameters_untouched(self):
        p = torch.randn(3)
        adam = Adam([("p", p)], lr=1.0)
        before = p.clone()
        adam.step()
        assert torch.equal(p, before)


class TestTrainStep:
    def test_plain_step_has_zero_adv_component(self):
        config, pools, val_pool, store = synthetic_setup()
        state = init_state(config, total_steps=10)
        cache = EncCache(store)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2, state.sampler_rng)
        breakdown = train_step(state, cache, sampler.sample())
        assert breakdown.loss_adv == 0.0
        assert breakdown.lam == 0.0
        assert breakdown.total == breakdown.loss_c
        assert state.step == 1

    def test_same_state_batch_seed_is_bit_identical(self):
        results = []
        for _ in range(2):
            config, pools, val_pool, store = synthetic_setup(
                regime="UDA", adaptation="discriminator")
            state = init_state(config, total_steps=10)
            cache = EncCache(store)
            sampler = BalancedPairSampler(pools.source, 4, 2, 2,
                                          state.sampler_rng)
            tsampler = UnlabeledPairSampler(pools.target, 4, 16,
                                            state.target_rng)
            for _ in range(3):
                bd = train_step(state, cache, sampler.sample(), tsampler.sample())
            results.append((bd, [p.detach().clone()
                                 for p in state.model.parameters()]))
        assert results[0][0] == results[1][0]
        for a, b in zip(results[0][1], results[1][1]):
            assert torch.equal(a, b)

    def test_lambda_matches_schedule_exactly(self):
        from lexadapt.adaptation import lambda_schedule
        config, pools, val_pool, store = synthetic_setup(
            regime="UDA", adaptation="discriminator", gamma=0.2)
        state = init_state(config, total_steps=40)
        cache = EncCache(store)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2, state.sampler_rng)
        tsampler = UnlabeledPairSampler(pools.target, 4, 16, state.target_rng)
        for expected_t in range(4):
            bd = train_step(state, cache, sampler.sample(), tsampler.sample())
            assert bd.lam == lambda_schedule(expected_t, 40, 0.2)

    def test_wasserstein_step_clips_critic(self):
        config, pools, val_pool, store = synthetic_setup(
            regime="UDA", adaptation="wasserstein", clip_c=0.01)
        state = init_state(config, total_steps=10)
        cache = EncCache(store)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2, state.sampler_rng)
        tsampler = UnlabeledPairSampler(pools.target, 4, 16, state.target_rng)
        for _ in range(3):
            train_step(state, cache, sampler.sample(), tsampler.sample())
            for p in state.adversary.critic_parameters():
                assert p.abs().max().item() <= 0.01 + 1e-12

    def test_adaptation_none_trajectory_ignores_adversary_presence(self):
        # Identical seeds, with and without an adversary object: parameter
        # trajectories must match because no gradient flows to or from it.
        config, pools, val_pool, store = synthetic_setup()
        cache = EncCache(store)
        state_plain = init_state(config, total_steps=10)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2,
                                      state_plain.sampler_rng)
        batches = [sampler.sample() for _ in range(3)]
        for b in batches:
            train_step(state_plain, cache, b)

        from lexadapt.adaptation import Adversary
        state_extra = init_state(config, total_steps=10)
        state_extra.adversary = Adversary(config.model.width, 6, (8, 6), seed=9)
        adv_before = [p.detach().clone()
                      for p in state_extra.adversary.parameters()]
        for b in batches:
            train_step(state_extra, cache, b)
        for a, b in zip(state_plain.model.parameters(),
                        state_extra.model.parameters()):
            assert torch.equal(a, b)
        for a, b in zip(adv_before, state_extra.adversary.parameters()):
            assert torch.equal(a, b)

    def test_first_step_moves_parameters_against_fd_gradient(self):
        # Adam's first update has sign(-gradient); check against central
        # finite differences of the batch loss at the initial parameters.
        config, pools, val_pool, store = synthetic_setup()
        config_nodrop = TrainConfig(
            model=ModelConfig(d_in=16, d_att_token=6, h_gru=4, d_att_sent=4,
                              d_cls_hidden=6, dropout=0.0),
            task="B", candidate_articles=config.candidate_articles,
            max_epochs=3, seed=0)
        state = init_state(config_nodrop, total_steps=10)
        state.model.double()
        for key in list(state.optimizer.m):
            state.optimizer.m[key] = state.optimizer.m[key].double()
            state.optimizer.v[key] = state.optimizer.v[key].double()
        cache = EncCache(store, dtype=torch.float64)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2, state.sampler_rng)
        batch = sampler.sample()

        inputs = cache.pair_inputs(batch)
        labels = torch.tensor([p.label for p in batch], dtype=torch.float64)

        def loss_fn():
            probs, _ = state.model.forward_pairs(inputs)
            return classifier_loss(probs, labels)

        check = [("cls_out.weight", dict(state.model.named_parameters())["cls_out.weight"]),
                 ("condition_fwd.weight", dict(state.model.named_parameters())["condition_fwd.weight"])]
        fd = {name: g for (name, _), g in zip(check, fd_gradients(
            loss_fn, [p for _, p in check], eps=1e-5))}
        before = {name: p.detach().clone() for name, p in check}
        train_step(state, cache, batch)
        after = dict(state.model.named_parameters())
        for name, _ in check:
            delta = (after[name].detach() - before[name]).numpy()
            grad = fd[name]
            mask = np.abs(grad) > 1e-7
            assert (np.sign(delta[mask]) == -np.sign(grad[mask])).all()

    def test_nonfinite_loss_raises_with_breakdown(self):
        config, pools, val_pool, store = synthetic_setup()
        state = init_state(config, total_steps=10)
        with torch.no_grad():
            state.model.cls_out.weight.fill_(float("nan"))
        cache = EncCache(store)
        sampler = BalancedPairSampler(pools.source, 4, 2, 2, state.sampler_rng)
        with pytest.raises(TrainError, match="non-finite"):
            train_step(state, cache, sampler.sample())


class TestFit:
    def test_separable_corpus_reaches_high_f1(self):
        wide = ModelConfig(d_in=16, d_att_token=12, h_gru=8, d_att_sent=8,
                           d_cls_hidden=12, dropout=0.1)
        config, pools, val_pool, store = synthetic_setup(
            num_docs=120, max_epochs=20, lr=3e-3, seed=1, model=wide)
        state, logs = fit(pools.source, val_pool, config, store)
        assert max(e.val_micro_f1 for e in logs) > 0.8

    def test_constant_validation_loss_halves_lr(self, monkeypatch):
        monkeypatch.setattr("lexadapt.training._validate",
                            lambda *a, **k: (1.0, 0.5, 0.5))
        config, pools, val_pool, store = synthetic_setup(
            max_epochs=8, plateau_patience=3)
        state, logs = fit(pools.source, val_pool, config, store)
        # epoch 0 sets the best; 3 flat epochs halve the lr once
        assert state.decays == 1
        assert state.lr == pytest.approx(config.lr * 0.5)

    def test_identical_runs_produce_identical_logs(self, tmp_path):
        logs = []
        for run in range(2):
            config, pools, val_pool, store = synthetic_setup(max_epochs=3)
            path = tmp_path / f"log{run}.jsonl"
            fit(pools.source, val_pool, config, store, log_path=str(path))
            logs.append(path.read_bytes())
        assert logs[0] == logs[1]

    def test_unlabeled_validation_pool_rejected(self):
        config, pools, val_pool, store = synthetic_setup()
        bad = [PairInstance(p.doc_ref, p.article, None, p.domain_id)
               for p in val_pool]
        with pytest.raises(TrainError, match="unlabeled"):
            fit(pools.source, bad, config, store)

    def test_early_stop_after_double_patience(self, monkeypatch):
        monkeypatch.setattr("lexadapt.training._validate",
                            lambda *a, **k: (1.0, 0.5, 0.5))
        config, pools, val_pool, store = synthetic_setup(
            max_epochs=30, plateau_patience=2)
        state, logs = fit(pools.source, val_pool, config, store)
        # 1 improving epoch (first) + 2*patience non-improving, then stop
        assert len(logs) == 1 + 2 * 2


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        config, pools, val_pool, store = synthetic_setup(
            regime="UDA", adaptation="wasserstein", max_epochs=2)
        state, _ = fit(pools.source, val_pool, config, store,
                       target_pool=pools.target,
                       last_checkpoint_path=str(tmp_path / "a.ckpt"))
        reloaded = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(reloaded, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for (n1, p1), (n2, p2) in zip(state.model.named_parameters(),
                                      reloaded.model.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2)
        for name in state.optimizer.m:
            assert torch.equal(state.optimizer.m[name], reloaded.optimizer.m[name])
        assert reloaded.step == state.step
        assert reloaded.lr == state.lr
        assert reloaded.best_val_loss == state.best_val_loss

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        # Uninterrupted 4-epoch run.
        config, pools, val_pool, store = synthetic_setup(
            regime="UDA", adaptation="discriminator", max_epochs=4)
        full_state, full_logs = fit(
            pools.source, val_pool, config, store, target_pool=pools.target,
            log_path=str(tmp_path / "full.log"),
            last_checkpoint_path=str(tmp_path / "full.ckpt"))

        # Same run suspended after 2 epochs, then resumed.
        config2, pools2, val_pool2, store2 = synthetic_setup(
            regime="UDA", adaptation="discriminator", max_epochs=4)
        fit(pools2.source, val_pool2, config2, store2,
            target_pool=pools2.target, stop_after_epoch=2,
            log_path=str(tmp_path / "part.log"),
            last_checkpoint_path=str(tmp_path / "part.ckpt"))
        resumed = load_checkpoint(tmp_path / "part.ckpt")
        fit(pools2.source, val_pool2, config2, store2,
            target_pool=pools2.target, resume_state=resumed,
            log_path=str(tmp_path / "part.log"),
            last_checkpoint_path=str(tmp_path / "resumed.ckpt"))

        assert (tmp_path / "full.ckpt").read_bytes() == \
            (tmp_path / "resumed.ckpt").read_bytes()
        assert (tmp_path / "full.log").read_bytes() == \
            (tmp_path / "part.log").read_bytes()

    def test_version_mismatch_rejected(self, tmp_path):
        config, pools, val_pool, store = synthetic_setup(max_epochs=1)
        state, _ = fit(pools.source, val_pool, config, store,
                       last_checkpoint_path=str(tmp_path / "a.ckpt"))
        data = bytearray((tmp_path / "a.ckpt").read_bytes())
        data[4:6] = (2).to_bytes(2, "little")
        (tmp_path / "bad.ckpt").write_bytes(bytes(data))
        from lexadapt.training import CheckpointError
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_truncated_payload_rejected(self, tmp_path):
        config, pools, val_pool, store = synthetic_setup(max_epochs=1)
        fit(pools.source, val_pool, config, store,
            last_checkpoint_path=str(tmp_path / "a.ckpt"))
        data = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(data[:-16])
        from lexadapt.training import CheckpointError
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_not_a_checkpoint_rejected(self, tmp_path):
        (tmp_path / "junk.ckpt").write_bytes(b"JUNKJUNKJUNK")
        from lexadapt.training import CheckpointError
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "junk.ckpt")


class TestConfigValidation:
    def test_batch_arithmetic_enforced(self):
        with pytest.raises(TrainError, match="arithmetic"):
            TrainConfig(model=TOY, batch_size=16, articles_per_batch=5)

    def test_adaptation_regime_coupling(self):
        with pytest.raises(TrainError):
            TrainConfig(model=TOY, adaptation="wasserstein", regime="NONE")
        with pytest.raises(TrainError):
            TrainConfig(model=TOY, adaptation="none", regime="UDA")

    def test_fact_variant_cannot_adapt(self):
        with pytest.raises(TrainError):
            TrainConfig(model=TOY, variant="fact_only",
                        adaptation="discriminator", regime="ADA")
