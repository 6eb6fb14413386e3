"""Dual training engine: warm-up pre-training, alternating policy-gradient
updates on the two mapping models, and annealed pseudo teacher forcing.

Each iteration trains the x->y model on a style-x batch (sampled transfers
scored by the frozen classifier and by the opposite model's reconstruction
probability), optionally consolidates it with one MLE step on back-translated
pairs, then does the mirrored pair of updates for the y->x model.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import TextClassifier
from .corpus import Sentence, StyleCorpus, StyleLabel, Vocabulary, pad_batch
from .evaluation import corpus_bleu, g2h2
from .optim import AdamState, adam_step, clip_global_norm, collect_grads, zero_grads
from .pseudo import PseudoPair, back_translate_batch
from .rewards import RewardConfig, combined_rewards
from .seq2seq import Seq2Seq

ABLATIONS = ("rl_plus_mle", "rl_only", "mle_only")
BASELINE_MODES = ("leave_one_out", "none")


@dataclass
class AnnealSchedule:
    """Exponential growth of the teacher-forcing interval, capped."""

    p0: float = 1.0
    p_max: float = 100.0
    rate: float = 1.1
    gap: float = 1000.0

    def __post_init__(self):
        if self.rate <= 1.0:
            raise ValueError("rate must exceed 1")
        if self.p0 > self.p_max:
            raise ValueError("p0 must not exceed p_max")


def anneal_interval(iteration: int, schedule: AnnealSchedule) -> float:
    """Interval p at a given iteration: min(p0 * rate^(i/gap), p_max)."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    exponent = (iteration / schedule.gap) * math.log(schedule.rate)
    if exponent >= math.log(schedule.p_max / schedule.p0):
        return schedule.p_max
    return schedule.p0 * math.exp(exponent)


@dataclass
class TrainConfig:
    pretrain_epochs: int = 5
    max_dual_epochs: int = 20
    max_iterations: int | None = None
    pretrain_lr: float = 1e-3
    dual_lr: float = 1e-5
    pretrain_batch: int = 32
    dual_batch: int = 128
    reward: RewardConfig = field(default_factory=RewardConfig)
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    baseline_mode: str = "leave_one_out"
    ablation: str = "rl_plus_mle"
    patience: int = 1
    grad_clip: float = 5.0
    temperature: float = 1.0
    max_decode_len: int = 32
    log_rewards: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
        if min(self.pretrain_lr, self.dual_lr) <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class TrainState:
    iteration: int = 0
    epoch: int = 0
    interval: float = 1.0
    last_trigger: dict = field(default_factory=dict)
    degenerate_count: int = 0
    best_score: float = -math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    history: list[dict] = field(default_factory=list)


def should_teacher_force(state: TrainState, direction: str) -> bool:
    """Spacing rule: trigger once the gap since the last trigger reaches p.

    Well-defined for fractional p and equal to the modulo rule for integer p
    starting from p0 = 1.  Updates the trigger bookkeeping when firing.
    """
    last = state.last_trigger.get(direction)
    if last is None or state.iteration - last >= state.interval:
        state.last_trigger[direction] = state.iteration
        return True
    return False


# ---------------------------------------------------------------------------
# policy gradient
# ---------------------------------------------------------------------------

def reinforce_gradient(policy: Seq2Seq, sources: list[Sentence], k: int,
                       reward_fn, baseline_mode: str, rng: np.random.Generator,
                       temperature: float = 1.0, max_len: int | None = None,
                       ) -> tuple[dict[str, np.ndarray], dict]:
    """Sampled estimate of the gradient of expected reward, as parameter grads.

    Draws k samples per source, scores them with ``reward_fn(samples,
    sources_repeated) -> rewards``, subtracts the leave-one-out baseline when
    enabled, and backpropagates (1/(B*k)) * sum advantage * log-prob.  Empty
    samples keep their gradient term with reward 0 but are excluded from the
    baseline means, so the estimator stays unbiased.
    """
    batch = len(sources)
    samples, _ = policy.sample_batch(sources, k, rng, max_len, temperature)
    sources_rep = [sources[i // k] for i in range(batch * k)]
    rewards = np.asarray(reward_fn(samples, sources_rep), dtype=np.float64)

    valid = np.array([len(s.surface) > 0 for s in samples], dtype=np.float64)
    rewards = rewards * valid
    r_mat = rewards.reshape(batch, k)
    v_mat = valid.reshape(batch, k)
    if baseline_mode == "leave_one_out" and k > 1:
        # pairwise-difference form of R_k - mean(others): exactly zero when
        # all rewards in a group agree
        diffs = (r_mat[:, :, None] - r_mat[:, None, :]) * v_mat[:, None, :]
        others_cnt = v_mat.sum(axis=1, keepdims=True) - v_mat
        advantage = np.where(others_cnt > 0,
                             diffs.sum(axis=2) / np.maximum(others_cnt, 1.0),
                             r_mat)
    else:
        advantage = r_mat
    advantage = advantage.reshape(-1)

    src_ids, src_mask = pad_batch([s.ids for s in sources])
    tgt_ids, tgt_mask = pad_batch([s.ids for s in samples])
    weights = advantage / (batch * k)
    zero_grads(policy.params)
    with ad.Tape() as tape:
        loss = policy._teacher_forced_nll(src_ids, src_mask, tgt_ids, tgt_mask,
                                          row_weights=weights, source_repeat=k)
    ad.backward(tape, loss)
    grads = collect_grads(policy.params)
    zero_grads(policy.params)
    stats = {
        "mean_reward": float(r_mat.mean()),
        "degenerate": int((valid == 0).sum()),
        "samples": samples,
        "rewards": rewards,
    }
    return grads, stats


def rl_step(policy: Seq2Seq, opposite_snapshot: Seq2Seq, clf: TextClassifier,
            batch: list[Sentence], target: StyleLabel, cfg: TrainConfig,
            opt: AdamState, rng: np.random.Generator) -> dict:
    """One policy-gradient update for one direction; returns reward stats."""
    captured = {}

    def reward_fn(samples, sources_rep):
        r_style, r_content, r_total = combined_rewards(
            clf, opposite_snapshot, samples, sources_rep, target, cfg.reward
        )
        captured["r_style"] = r_style
        captured["r_content"] = r_content
        captured["r_total"] = r_total
        return r_total

    grads, stats = reinforce_gradient(
        policy, batch, cfg.reward.sample_size, reward_fn, cfg.baseline_mode,
        rng, cfg.temperature, cfg.max_decode_len,
    )
    clip_global_norm(grads, cfg.grad_clip)
    adam_step(policy.params, grads, opt)
    return {
        "mean_r_style": float(np.mean(captured["r_style"])),
        "mean_r_content": float(np.mean(captured["r_content"])),
        "mean_r_total": float(np.mean(captured["r_total"])),
        "degenerate": stats["degenerate"],
    }


def teacher_forcing_step(model: Seq2Seq, opposite_live: Seq2Seq,
                         batch: list[Sentence], opt: AdamState,
                         cfg: TrainConfig, iteration: int = 0) -> float:
    """Back-translate a batch with the live opposite model, then one MLE step.

    The pair's target side is always the authentic corpus sentence.
    """
    pairs = back_translate_batch(opposite_live, batch, iteration,
                                 max_len=cfg.max_decode_len)
    return model.mle_step([(p.source, p.target) for p in pairs], opt,
                          cfg.grad_clip)


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

def pretrain(model_f: Seq2Seq, model_g: Seq2Seq,
             pairs_f: list[PseudoPair], pairs_g: list[PseudoPair],
             cfg: TrainConfig,
             dev_pairs_f: list[PseudoPair] | None = None,
             dev_pairs_g: list[PseudoPair] | None = None) -> dict:
    """MLE warm start of both models on their template pseudo pairs."""
    report = {}
    for name, model, pairs, dev_pairs, salt in (
        ("x2y", model_f, pairs_f, dev_pairs_f, 11),
        ("y2x", model_g, pairs_g, dev_pairs_g, 13),
    ):
        opt = AdamState(lr=cfg.pretrain_lr)
        rng = np.random.default_rng([cfg.seed, salt])
        dev_tuples = [(p.source, p.target) for p in dev_pairs] if dev_pairs else None
        ppl_before = (
            math.exp(model.mean_nll(dev_tuples)) if dev_tuples else None
        )
        losses = []
        for _ in range(cfg.pretrain_epochs):
            order = rng.permutation(len(pairs))
            for lo in range(0, len(order), cfg.pretrain_batch):
                chunk = [pairs[i] for i in order[lo: lo + cfg.pretrain_batch]]
                losses.append(model.mle_step(
                    [(p.source, p.target) for p in chunk], opt, cfg.grad_clip
                ))
        ppl_after = (
            math.exp(model.mean_nll(dev_tuples)) if dev_tuples else None
        )
        report[name] = {
            "ppl_before": ppl_before,
            "ppl_after": ppl_after,
            "final_loss": losses[-1] if losses else None,
        }
    return report


# ---------------------------------------------------------------------------
# dev-set scoring
# ---------------------------------------------------------------------------

def _direction_metrics(model: Seq2Seq, inputs: list[Sentence],
                       clf: TextClassifier, target: StyleLabel,
                       refs: list[list[Sentence]] | None,
                       max_len: int) -> dict:
    outputs = model.greedy_decode_batch(inputs, max_len=max_len)
    nonempty = [i for i, o in enumerate(outputs) if len(o.surface) > 0]
    hits = 0
    if nonempty:
        probs = clf.classify_prob_batch([outputs[i] for i in nonempty])
        preds = (probs[:, 1] > probs[:, 0]).astype(int)
        hits = int((preds == target.index).sum())
    acc = 100.0 * hits / len(outputs)
    bleu_self = corpus_bleu([o.surface for o in outputs],
                            [[inp.surface] for inp in inputs])
    metrics = {"acc": acc, "bleu_self": bleu_self,
               "score": g2h2(acc, bleu_self)[1]}
    if refs is not None:
        bleu_gold = corpus_bleu([o.surface for o in outputs],
                                [[r.surface for r in rr] for rr in refs])
        metrics["bleu_gold"] = bleu_gold
        metrics["h2_gold"] = g2h2(acc, bleu_gold)[1]
    return metrics


def evaluate_dev(model_f: Seq2Seq, model_g: Seq2Seq, clf: TextClassifier,
                 corpus: StyleCorpus, cfg: TrainConfig,
                 gold_refs: dict | None = None, split: str = "dev") -> dict:
    """Development score: harmonic mean of style accuracy and the
    references-free BLEU of outputs against their own inputs, averaged over
    the two directions.  Gold-reference numbers ride along when available."""
    out = {}
    for key, model, src_label, tgt_label in (
        ("x2y", model_f, corpus.label_x, corpus.label_y),
        ("y2x", model_g, corpus.label_y, corpus.label_x),
    ):
        inputs = corpus.of(src_label, split)
        refs = None
        if gold_refs is not None:
            refs = gold_refs.get((src_label.name, split))
        out[key] = _direction_metrics(model, inputs, clf, tgt_label, refs,
                                      cfg.max_decode_len)
    out["dev_acc"] = (out["x2y"]["acc"] + out["y2x"]["acc"]) / 2.0
    out["dev_bleu"] = (out["x2y"]["bleu_self"] + out["y2x"]["bleu_self"]) / 2.0
    out["dev_score"] = (out["x2y"]["score"] + out["y2x"]["score"]) / 2.0
    if "bleu_gold" in out["x2y"]:
        out["dev_gold_bleu"] = (out["x2y"]["bleu_gold"] + out["y2x"]["bleu_gold"]) / 2.0
        out["dev_gold_h2"] = (out["x2y"]["h2_gold"] + out["y2x"]["h2_gold"]) / 2.0
    return out


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model_f: Seq2Seq
    model_g: Seq2Seq
    state: TrainState
    history: list[dict]


def _epoch_batches(items: list, batch_size: int, seed_parts: list[int]) -> list[list]:
    rng = np.random.default_rng(seed_parts)
    order = rng.permutation(len(items))
    return [[items[i] for i in order[lo: lo + batch_size]]
            for lo in range(0, len(order), batch_size)]


def _history_row(state: TrainState, reward_sums: dict, n_rl: int, dev: dict) -> dict:
    row = {
        "iteration": state.iteration,
        "epoch": state.epoch,
        "mean_r_style": reward_sums["r_style"] / n_rl if n_rl else None,
        "mean_r_content": reward_sums["r_content"] / n_rl if n_rl else None,
        "mean_r_total": reward_sums["r_total"] / n_rl if n_rl else None,
        "dev_acc": dev["dev_acc"],
        "dev_bleu": dev["dev_bleu"],
        "dev_score": dev["dev_score"],
        "dev_gold_bleu": dev.get("dev_gold_bleu"),
        "dev_gold_h2": dev.get("dev_gold_h2"),
    }
    return row


def _fmt_csv(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_HISTORY_COLUMNS = ("iteration", "epoch", "mean_r_style", "mean_r_content",
                    "mean_r_total", "dev_acc", "dev_bleu", "dev_score",
                    "dev_gold_bleu", "dev_gold_h2")


class _RunWriter:
    """history.csv / rewards.csv / checkpoints under one run directory."""

    def __init__(self, run_dir, enabled_rewards: bool):
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.enabled_rewards = enabled_rewards
        if self.run_dir is not None:
            (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
            self.history_path = self.run_dir / "history.csv"
            self.history_path.write_text(",".join(_HISTORY_COLUMNS) + "\n")
            if enabled_rewards:
                self.rewards_path = self.run_dir / "rewards.csv"
                self.rewards_path.write_text("iteration,mean_r_style,mean_r_content,mean_r_total\n")

    def history(self, row: dict) -> None:
        if self.run_dir is None:
            return
        with open(self.history_path, "a", encoding="utf-8") as fh:
            fh.write(",".join(_fmt_csv(row[c]) for c in _HISTORY_COLUMNS) + "\n")

    def rewards(self, iteration: int, stats_f: dict | None, stats_g: dict | None) -> None:
        if self.run_dir is None or not self.enabled_rewards:
            return
        stats = [s for s in (stats_f, stats_g) if s is not None]
        if not stats:
            return
        means = [sum(s[k] for s in stats) / len(stats)
                 for k in ("mean_r_style", "mean_r_content", "mean_r_total")]
        with open(self.rewards_path, "a", encoding="utf-8") as fh:
            fh.write(f"{iteration},{means[0]!r},{means[1]!r},{means[2]!r}\n")

    def checkpoint(self, tag: str, model_f: Seq2Seq, model_g: Seq2Seq,
                   opt_f: AdamState, opt_g: AdamState,
                   state: TrainState | None = None) -> None:
        if self.run_dir is None:
            return
        ck = self.run_dir / "checkpoints"
        model_f.save(ck / f"f_{tag}.ckpt")
        model_g.save(ck / f"g_{tag}.ckpt")
        if tag == "last":
            save_checkpoint(ck / "opt_f_last.ckpt", opt_f.state_arrays(), {"t": opt_f.t})
            save_checkpoint(ck / "opt_g_last.ckpt", opt_g.state_arrays(), {"t": opt_g.t})
            if state is not None:
                payload = {
                    "iteration": state.iteration,
                    "epoch": state.epoch,
                    "interval": state.interval,
                    "last_trigger": state.last_trigger,
                    "degenerate_count": state.degenerate_count,
                    "best_score": state.best_score,
                    "best_epoch": state.best_epoch,
                    "epochs_since_improvement": state.epochs_since_improvement,
                    "history": state.history,
                }
                (ck / "state.json").write_text(
                    json.dumps(payload, sort_keys=True), encoding="utf-8"
                )


def load_train_state(run_dir) -> TrainState:
    payload = json.loads((Path(run_dir) / "checkpoints" / "state.json").read_text())
    state = TrainState()
    state.iteration = payload["iteration"]
    state.epoch = payload["epoch"]
    state.interval = payload["interval"]
    state.last_trigger = payload["last_trigger"]
    state.degenerate_count = payload["degenerate_count"]
    state.best_score = payload["best_score"]
    state.best_epoch = payload["best_epoch"]
    state.epochs_since_improvement = payload["epochs_since_improvement"]
    state.history = payload["history"]
    return state


def train(model_f: Seq2Seq, model_g: Seq2Seq, clf: TextClassifier,
          corpus: StyleCorpus, cfg: TrainConfig, run_dir=None,
          gold_refs: dict | None = None, resume: bool = False) -> TrainResult:
    """Alternating dual training; returns the best-dev-score checkpoints.

    Per iteration: policy-gradient update for the x->y model on a style-x
    batch, conditional teacher forcing for it on back-translated style-y
    sentences, then the mirrored updates for the y->x model.  Dev score is
    evaluated once per epoch; training stops at the iteration/epoch budget or
    once the score has not improved for ``patience`` epochs, whichever comes
    first, and the best checkpoint is returned.
    """
    if not clf.frozen:
        raise RuntimeError("classifier must be frozen before dual training")
    train_x = corpus.of(corpus.label_x, "train")
    train_y = corpus.of(corpus.label_y, "train")
    iters_per_epoch = max(1, math.ceil(len(train_x) / cfg.dual_batch))
    max_iters = cfg.max_iterations
    if max_iters is None:
        max_iters = cfg.max_dual_epochs * iters_per_epoch

    opt_f = AdamState(lr=cfg.dual_lr)
    opt_g = AdamState(lr=cfg.dual_lr)
    state = TrainState()
    start_epoch = 0
    if resume:
        if run_dir is None:
            raise ValueError("resume needs a run directory")
        ck = Path(run_dir) / "checkpoints"
        model_f.load_state_dict(load_checkpoint(ck / "f_last.ckpt")[0])
        model_g.load_state_dict(load_checkpoint(ck / "g_last.ckpt")[0])
        arrays, meta = load_checkpoint(ck / "opt_f_last.ckpt")
        opt_f.load_state_arrays(arrays, meta["t"])
        arrays, meta = load_checkpoint(ck / "opt_g_last.ckpt")
        opt_g.load_state_arrays(arrays, meta["t"])
        state = load_train_state(run_dir)
        start_epoch = state.epoch

    writer = _RunWriter(run_dir, cfg.log_rewards)
    for row in state.history:
        writer.history(row)

    best_f = model_f.clone()
    best_g = model_g.clone()
    rl_on = cfg.ablation in ("rl_plus_mle", "rl_only")
    mle_on = cfg.ablation in ("rl_plus_mle", "mle_only")

    for epoch in range(start_epoch, cfg.max_dual_epochs):
        if state.iteration >= max_iters:
            break
        state.epoch = epoch
        rl_x = _epoch_batches(train_x, cfg.dual_batch, [cfg.seed, 21, epoch])
        rl_y = _epoch_batches(train_y, cfg.dual_batch, [cfg.seed, 22, epoch])
        tf_y = _epoch_batches(train_y, cfg.dual_batch, [cfg.seed, 23, epoch])
        tf_x = _epoch_batches(train_x, cfg.dual_batch, [cfg.seed, 24, epoch])
        rng = np.random.default_rng([cfg.seed, 25, epoch])

        reward_sums = {"r_style": 0.0, "r_content": 0.0, "r_total": 0.0}
        n_rl = 0
        for it in range(iters_per_epoch):
            if state.iteration >= max_iters:
                break
            state.interval = anneal_interval(state.iteration, cfg.schedule)
            stats_f = stats_g = None

            if rl_on:
                g_snap = model_g.clone()
                f_snap = model_f.clone()
                stats_f = rl_step(model_f, g_snap, clf, rl_x[it % len(rl_x)],
                                  corpus.label_y, cfg, opt_f, rng)
            if mle_on and should_teacher_force(state, "x2y"):
                teacher_forcing_step(model_f, model_g, tf_y[it % len(tf_y)],
                                     opt_f, cfg, state.iteration)

            if rl_on:
                stats_g = rl_step(model_g, f_snap, clf, rl_y[it % len(rl_y)],
                                  corpus.label_x, cfg, opt_g, rng)
            if mle_on and should_teacher_force(state, "y2x"):
                teacher_forcing_step(model_g, model_f, tf_x[it % len(tf_x)],
                                     opt_g, cfg, state.iteration)

            if stats_f is not None:
                for s in (stats_f, stats_g):
                    reward_sums["r_style"] += s["mean_r_style"]
                    reward_sums["r_content"] += s["mean_r_content"]
                    reward_sums["r_total"] += s["mean_r_total"]
                    state.degenerate_count += s["degenerate"]
                n_rl += 2
            writer.rewards(state.iteration, stats_f, stats_g)
            state.iteration += 1

        dev = evaluate_dev(model_f, model_g, clf, corpus, cfg, gold_refs)
        row = _history_row(state, reward_sums, n_rl, dev)
        state.history.append(row)
        writer.history(row)

        improved = dev["dev_score"] > state.best_score
        if improved:
            state.best_score = dev["dev_score"]
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            best_f = model_f.clone()
            best_g = model_g.clone()
            writer.checkpoint("best", model_f, model_g, opt_f, opt_g)
        else:
            state.epochs_since_improvement += 1
        state.epoch = epoch + 1
        writer.checkpoint("last", model_f, model_g, opt_f, opt_g, state)
        if state.epochs_since_improvement >= cfg.patience:
            break
        if state.iteration >= max_iters:
            break

    return TrainResult(model_f=best_f, model_g=best_g, state=state,
                       history=state.history)


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
