import json
import math
from pathlib import Path

import numpy as np
import pytest

from dualstyle.checkpoint import checkpoint_hash
from dualstyle.dualrl import (
    AnnealSchedule,
    TrainConfig,
    TrainState,
    anneal_interval,
    evaluate_dev,
    pretrain,
    reinforce_gradient,
    rl_step,
    should_teacher_force,
    teacher_forcing_step,
    train,
)
from dualstyle.optim import AdamState, adam_step
from dualstyle.pseudo import build_style_lexicon, make_pretrain_pairs
from dualstyle.rewards import RewardConfig
from dualstyle.seq2seq import Seq2Seq

from pg_oracle import (
    build_masked_model,
    exact_gradient,
    make_reward_table,
    reward_fn_from_table,
)

DEFAULT_SCHEDULE = AnnealSchedule()  # p0=1, p_max=100, rate=1.1, gap=1000


def test_interval_starts_at_p0():
    assert anneal_interval(0, DEFAULT_SCHEDULE) == 1.0


def test_interval_monotone_and_capped():
    values = [anneal_interval(i, DEFAULT_SCHEDULE) for i in range(0, 100000, 500)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == 100.0


def test_interval_cap_boundary():
    # gap * ln(p_max/p0) / ln(rate) = 48317.7: the cap binds from 48318 on
    assert anneal_interval(48317, DEFAULT_SCHEDULE) < 100.0
    assert anneal_interval(48318, DEFAULT_SCHEDULE) == 100.0
    assert anneal_interval(10**9, DEFAULT_SCHEDULE) == 100.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        AnnealSchedule(rate=1.0)
    with pytest.raises(ValueError):
        AnnealSchedule(p0=200.0, p_max=100.0)
    with pytest.raises(ValueError):
        anneal_interval(-1, DEFAULT_SCHEDULE)


def test_trigger_every_iteration_at_unit_interval():
    state = TrainState()
    state.interval = 1.0
    fired = []
    for i in range(5):
        state.iteration = i
        fired.append(should_teacher_force(state, "x2y"))
    assert fired == [True] * 5


def test_trigger_spacing_fractional():
    state = TrainState()
    state.interval = 2.5
    fired = []
    for i in range(10):
        state.iteration = i
        if should_teacher_force(state, "x2y"):
            fired.append(i)
    assert fired == [0, 3, 6, 9]


def test_trigger_spacing_at_cap():
    state = TrainState()
    state.interval = 100.0
    fired = []
    for i in range(250):
        state.iteration = i
        if should_teacher_force(state, "x2y"):
            fired.append(i)
    assert fired == [0, 100, 200]


def test_directions_have_independent_triggers():
    state = TrainState()
    state.interval = 2.0
    state.iteration = 0
    assert should_teacher_force(state, "x2y")
    state.iteration = 1
    assert should_teacher_force(state, "y2x")  # first call for this direction
    assert not should_teacher_force(state, "x2y")


# ---------------------------------------------------------------------------
# policy gradient
# ---------------------------------------------------------------------------

def test_equal_rewards_give_zero_gradient():
    vocab, model, source = build_masked_model(seed=3)
    # keep empty samples out of the draw: they are forced to reward zero,
    # which would legitimately break the all-equal premise
    model.params["out_b"].value[3] -= 8.0
    rng = np.random.default_rng(0)
    grads, stats = reinforce_gradient(
        model, [source] * 4, 3, lambda samples, _: np.full(len(samples), 0.7),
        "leave_one_out", rng, max_len=3,
    )
    assert stats["degenerate"] == 0
    for g in grads.values():
        assert np.abs(g).max() < 1e-15

    params_before = {k: p.value.copy() for k, p in model.params.items()}
    adam_step(model.params, grads, AdamState(lr=1e-3))
    for k, p in model.params.items():
        assert np.array_equal(p.value, params_before[k])


def test_k1_baseline_reduces_to_plain_estimator():
    vocab, model, source = build_masked_model(seed=4)
    table = make_reward_table(seed=2)
    fn = reward_fn_from_table(table)
    g1, _ = reinforce_gradient(model, [source] * 8, 1, fn, "leave_one_out",
                               np.random.default_rng(5), max_len=3)
    g2, _ = reinforce_gradient(model, [source] * 8, 1, fn, "none",
                               np.random.default_rng(5), max_len=3)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


@pytest.mark.parametrize("baseline", ["none", "leave_one_out"])
def test_estimator_is_unbiased(baseline):
    vocab, model, source = build_masked_model(seed=0)
    table = make_reward_table(seed=1)
    fn = reward_fn_from_table(table)
    exact = exact_gradient(model, source, table)

    k = 4
    per_batch = 40
    n_batches = 120  # 19.2k samples: a fast version of the acceptance check
    rng = np.random.default_rng(99)
    names = sorted(exact)
    sums = {k_: np.zeros_like(exact[k_]) for k_ in names}
    sq_sums = {k_: np.zeros_like(exact[k_]) for k_ in names}
    for _ in range(n_batches):
        grads, _ = reinforce_gradient(model, [source] * per_batch, k, fn,
                                      baseline, rng, max_len=3)
        for k_ in names:
            est = -grads[k_]  # loss gradient is minus the reward gradient
            sums[k_] += est
            sq_sums[k_] += est * est
    bad = 0
    total = 0
    err_sq = 0.0
    ref_sq = 0.0
    for k_ in names:
        mean = sums[k_] / n_batches
        var = sq_sums[k_] / n_batches - mean ** 2
        sigma = np.sqrt(np.maximum(var, 0.0) / n_batches)
        z = np.abs(mean - exact[k_]) / np.where(sigma > 0, sigma, np.inf)
        bad += int((z > 4.0).sum())
        total += z.size
        err_sq += float(((mean - exact[k_]) ** 2).sum())
        ref_sq += float((exact[k_] ** 2).sum())
    # a correct estimator converges in aggregate and leaves at most
    # multiple-comparison stragglers beyond 4 sigma
    assert math.sqrt(err_sq / ref_sq) < 0.1
    assert bad <= max(2, total // 150), f"{bad}/{total} coordinates out of bounds"


def test_rl_step_runs_and_reports(tiny_task, tiny_models, tiny_classifier):
    corpus, gold, vocab = tiny_task
    model_f, model_g = tiny_models
    policy = model_f.clone()
    cfg = TrainConfig(dual_lr=1e-3, reward=RewardConfig(sample_size=2), seed=0)
    stats = rl_step(policy, model_g.clone(), tiny_classifier,
                    corpus.of(corpus.label_x, "train")[:16], corpus.label_y,
                    cfg, AdamState(lr=cfg.dual_lr), np.random.default_rng(0))
    assert 0.0 <= stats["mean_r_style"] <= 1.0
    assert 0.0 <= stats["mean_r_content"] <= 1.0
    assert stats["mean_r_total"] <= max(stats["mean_r_style"], 1.0)
    assert stats["degenerate"] >= 0


def test_teacher_forcing_targets_are_authentic(tiny_task, tiny_models):
    corpus, gold, vocab = tiny_task
    model_f, model_g = tiny_models
    model = model_f.clone()
    batch = corpus.of(corpus.label_y, "train")[:8]
    from dualstyle.pseudo import back_translate_batch
    pairs = back_translate_batch(model_g, batch, iteration=1)
    assert all(p.target is s for p, s in zip(pairs, batch))
    loss = teacher_forcing_step(model, model_g, batch,
                                AdamState(lr=1e-3), TrainConfig(), iteration=1)
    assert math.isfinite(loss) and loss > 0


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

def build_pairs(tiny_task):
    corpus, _, vocab = tiny_task
    lex = build_style_lexicon(corpus, lam=1.0, gamma=30.0)
    pairs = make_pretrain_pairs(corpus, lex, vocab)
    dev = make_pretrain_pairs(corpus, lex, vocab, split="dev")
    return pairs, dev


def test_pretrain_zero_epochs_is_identity(tiny_task, tiny_models):
    (pairs_f, pairs_g), _ = build_pairs(tiny_task)
    model_f, model_g = tiny_models
    f2, g2 = model_f.clone(), model_g.clone()
    cfg = TrainConfig(pretrain_epochs=0, seed=0)
    pretrain(f2, g2, pairs_f, pairs_g, cfg)
    for k in f2.params:
        assert np.array_equal(f2.params[k].value, model_f.params[k].value)


def test_pretrain_reduces_dev_perplexity_and_is_deterministic(tiny_task, tiny_models):
    (pairs_f, pairs_g), (dev_f, dev_g) = build_pairs(tiny_task)
    model_f, model_g = tiny_models

    def run():
        f2, g2 = model_f.clone(), model_g.clone()
        cfg = TrainConfig(pretrain_epochs=1, pretrain_lr=2e-3, pretrain_batch=32, seed=0)
        report = pretrain(f2, g2, pairs_f, pairs_g, cfg,
                          dev_pairs_f=dev_f, dev_pairs_g=dev_g)
        return f2, report

    f_run1, report = run()
    for direction in ("x2y", "y2x"):
        assert report[direction]["ppl_after"] < report[direction]["ppl_before"]
    f_run2, _ = run()
    for k in f_run1.params:
        assert np.array_equal(f_run1.params[k].value, f_run2.params[k].value)


# ---------------------------------------------------------------------------
# the full loop at miniature scale
# ---------------------------------------------------------------------------

def mini_cfg(**kw):
    base = dict(
        max_dual_epochs=2, max_iterations=None, dual_lr=1e-3, dual_batch=64,
        reward=RewardConfig(sample_size=2),
        schedule=AnnealSchedule(p0=1.0, p_max=100.0, rate=1.1, gap=5.0),
        max_decode_len=16, seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def warm_models(tiny_task):
    corpus, _, vocab = tiny_task
    lex = build_style_lexicon(corpus, lam=1.0, gamma=30.0)
    pairs_f, pairs_g = make_pretrain_pairs(corpus, lex, vocab)
    model_f = Seq2Seq(vocab, embed_dim=24, hidden_dim=32, direction="x2y", seed=[5, 1])
    model_g = Seq2Seq(vocab, embed_dim=24, hidden_dim=32, direction="y2x", seed=[5, 2])
    cfg = TrainConfig(pretrain_epochs=2, pretrain_lr=2e-3, seed=0)
    pretrain(model_f, model_g, pairs_f, pairs_g, cfg)
    return model_f, model_g


def test_train_is_deterministic_and_freezes_classifier(
        tiny_task, warm_models, tiny_classifier, tmp_path):
    corpus, gold, vocab = tiny_task
    model_f, model_g = warm_models
    tiny_classifier.save(tmp_path / "cls_before.ckpt")

    def run(run_dir):
        res = train(model_f.clone(), model_g.clone(), tiny_classifier, corpus,
                    mini_cfg(), run_dir=run_dir, gold_refs=gold.refs)
        return res

    res1 = run(tmp_path / "r1")
    res2 = run(tmp_path / "r2")
    h1 = (tmp_path / "r1" / "history.csv").read_bytes()
    h2 = (tmp_path / "r2" / "history.csv").read_bytes()
    assert h1 == h2
    for name in ("f_best", "g_best", "f_last", "g_last"):
        assert checkpoint_hash(tmp_path / "r1" / "checkpoints" / f"{name}.ckpt") == \
            checkpoint_hash(tmp_path / "r2" / "checkpoints" / f"{name}.ckpt")

    tiny_classifier.save(tmp_path / "cls_after.ckpt")
    assert checkpoint_hash(tmp_path / "cls_before.ckpt") == \
        checkpoint_hash(tmp_path / "cls_after.ckpt")

    assert len(res1.history) == 2
    assert (tmp_path / "r1" / "rewards.csv").read_text().count("\n") >= 2


def test_best_checkpoint_matches_best_score(tiny_task, warm_models, tiny_classifier, tmp_path):
    corpus, gold, vocab = tiny_task
    model_f, model_g = warm_models
    cfg = mini_cfg(max_dual_epochs=3)
    res = train(model_f.clone(), model_g.clone(), tiny_classifier, corpus,
                cfg, run_dir=tmp_path / "run", gold_refs=gold.refs)
    best_row = max(res.history, key=lambda r: r["dev_score"])
    assert res.state.best_score == best_row["dev_score"]
    redo = evaluate_dev(res.model_f, res.model_g, tiny_classifier, corpus, cfg,
                        gold_refs=gold.refs)
    assert redo["dev_score"] == pytest.approx(res.state.best_score, abs=1e-9)


def test_early_stopping_stops_after_stall(tiny_task, warm_models, tiny_classifier):
    corpus, gold, vocab = tiny_task
    model_f, model_g = warm_models
    # patience 1 with a long epoch budget: the run must halt on the first
    # epoch whose dev score fails to improve, not exhaust the budget
    cfg = mini_cfg(max_dual_epochs=12, patience=1)
    res = train(model_f.clone(), model_g.clone(), tiny_classifier, corpus, cfg,
                gold_refs=gold.refs)
    scores = [row["dev_score"] for row in res.history]
    if len(res.history) < 12:
        assert scores[-1] <= max(scores[:-1])
        running_best = scores[0]
        for s in scores[1:-1]:
            assert s > running_best
            running_best = s


def test_resume_reproduces_straight_run(tiny_task, warm_models, tiny_classifier, tmp_path):
    corpus, gold, vocab = tiny_task
    model_f, model_g = warm_models
    cfg4 = mini_cfg(max_dual_epochs=4, patience=10)
    train(model_f.clone(), model_g.clone(), tiny_classifier, corpus, cfg4,
          run_dir=tmp_path / "straight", gold_refs=gold.refs)

    cfg2 = mini_cfg(max_dual_epochs=2, patience=10)
    train(model_f.clone(), model_g.clone(), tiny_classifier, corpus, cfg2,
          run_dir=tmp_path / "resumed", gold_refs=gold.refs)
    train(model_f.clone(), model_g.clone(), tiny_classifier, corpus, cfg4,
          run_dir=tmp_path / "resumed", gold_refs=gold.refs, resume=True)

    assert (tmp_path / "straight" / "history.csv").read_bytes() == \
        (tmp_path / "resumed" / "history.csv").read_bytes()
    for name in ("f_last", "g_last"):
        assert checkpoint_hash(tmp_path / "straight" / "checkpoints" / f"{name}.ckpt") == \
            checkpoint_hash(tmp_path / "resumed" / "checkpoints" / f"{name}.ckpt")


@pytest.mark.parametrize("mode", ["rl_only", "mle_only"])
def test_ablation_modes_run(tiny_task, warm_models, tiny_classifier, mode, tmp_path):
    corpus, gold, vocab = tiny_task
    model_f, model_g = warm_models
    cfg = mini_cfg(max_dual_epochs=1, ablation=mode)
    res = train(model_f.clone(), model_g.clone(), tiny_classifier, corpus, cfg,
                run_dir=tmp_path / mode, gold_refs=gold.refs)
    assert len(res.history) == 1
    row = res.history[0]
    if mode == "mle_only":
        assert row["mean_r_style"] is None
    else:
        assert row["mean_r_style"] is not None


def test_train_requires_frozen_classifier(tiny_task, warm_models):
    corpus, _, vocab = tiny_task
    from dualstyle.classifier import ClassifierConfig, TextClassifier
    clf = TextClassifier(vocab, ClassifierConfig(embed_dim=8, channels=4, seed=0))
    model_f, model_g = warm_models
    with pytest.raises(RuntimeError):
        train(model_f.clone(), model_g.clone(), clf, corpus, mini_cfg())
