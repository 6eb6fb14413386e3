"""Attention-based recurrent encoder-decoder used for both transfer directions.

One ``Seq2Seq`` instance is one mapping model.  Scoring (``log_prob``),
sampling and greedy/beam decoding share a single forward implementation, so a
sample's reported log-probability always agrees with an independent
``log_prob`` call on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import BOS, EOS, PAD, Sentence, Vocabulary, pad_batch
from .errors import EmptySequenceError
from .optim import AdamState, adam_step, clip_global_norm, collect_grads, zero_grads

MASK_NEG = -1e9  # additive score for padded source positions; exp underflows to 0


@dataclass
class DecodeConfig:
    max_len: int | None = None  # None: source length + 5, capped at 32
    mode: str = "greedy"  # greedy | sample
    temperature: float = 1.0
    seed: int = 0
    beam_width: int = 1


@dataclass
class SampleBatch:
    sentences: list[Sentence]
    log_probs: np.ndarray  # (K,), each equals log_prob(model, source, sample)


def _default_max_len(source_len: int, cap: int = 32) -> int:
    return min(source_len + 5, cap)


class Seq2Seq:
    """Single-layer LSTM encoder-decoder with bilinear attention."""

    def __init__(self, vocab: Vocabulary, embed_dim: int = 300,
                 hidden_dim: int = 256, direction: str = "x2y", seed: int = 0,
                 init_scale: float = 0.08, embed_scale: float = 0.01):
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.direction = direction
        v, e, h = len(vocab), embed_dim, hidden_dim
        rng = np.random.default_rng(seed)

        def uni(*shape):
            return ad.parameter(rng.uniform(-init_scale, init_scale, shape))

        self.params: dict[str, ad.Tensor] = {
            "embed": ad.parameter(rng.normal(0.0, embed_scale, (v, e))),
            "enc_wx": uni(e, 4 * h),
            "enc_wh": uni(h, 4 * h),
            "enc_b": ad.parameter(np.zeros(4 * h)),
            "dec_wx": uni(e, 4 * h),
            "dec_wh": uni(h, 4 * h),
            "dec_b": ad.parameter(np.zeros(4 * h)),
            "att_w": uni(h, h),
            "comb_w": uni(2 * h, h),
            "comb_b": ad.parameter(np.zeros(h)),
            "out_w": uni(h, v),
            "out_b": ad.parameter(np.zeros(v)),
        }

    # -- forward pieces ----------------------------------------------------
    # Recurrent state travels as one (B, 2H) array [h | c] so a step is a
    # single fused tape node.

    def _encode(self, src_ids: np.ndarray, src_mask: np.ndarray):
        """Run the encoder; padded steps leave the state untouched."""
        batch, src_len = src_ids.shape
        p = self.params
        hd = self.hidden_dim
        hc = ad.constant(np.zeros((batch, 2 * hd)))
        states = []
        for t in range(src_len):
            x = ad.embedding(p["embed"], src_ids[:, t])
            hc_new = ad.lstm_cell(x, hc, p["enc_wx"], p["enc_wh"], p["enc_b"])
            hc = ad.lerp_rows(src_mask[:, t: t + 1], hc_new, hc)
            states.append(ad.slice_cols(hc, 0, hd))
        enc_stack = ad.stack(states, axis=1)
        attn_bias = np.where(src_mask > 0, 0.0, MASK_NEG)
        return enc_stack, attn_bias, hc

    def _decode_step(self, tok_ids: np.ndarray, hc, enc_stack, attn_bias):
        p = self.params
        x = ad.embedding(p["embed"], tok_ids)
        hc = ad.lstm_cell(x, hc, p["dec_wx"], p["dec_wh"], p["dec_b"])
        h = ad.slice_cols(hc, 0, self.hidden_dim)
        ctx = ad.bilinear_attention(h, enc_stack, attn_bias, p["att_w"])
        comb = ad.tanh_affine(ad.concat([h, ctx], axis=1), p["comb_w"], p["comb_b"])
        logits = ad.affine(comb, p["out_w"], p["out_b"])
        return logits, hc

    def _teacher_forced_nll(self, src_ids, src_mask, tgt_ids, tgt_mask,
                            row_weights: np.ndarray | None = None,
                            source_repeat: int = 1):
        """Total (optionally row-weighted) NLL over unpadded target positions.

        With ``source_repeat=k`` the encoder runs once per distinct source and
        its states are tiled, so targets row b*k+j share source b.
        """
        enc_stack, attn_bias, hc = self._encode(src_ids, src_mask)
        if source_repeat > 1:
            enc_stack = ad.repeat_rows(enc_stack, source_repeat)
            attn_bias = np.repeat(attn_bias, source_repeat, axis=0)
            hc = ad.repeat_rows(hc, source_repeat)
        batch, tgt_len = tgt_ids.shape
        dec_in = np.concatenate(
            [np.full((batch, 1), BOS, dtype=np.int64), tgt_ids[:, :-1]], axis=1
        )
        total = ad.constant(np.asarray(0.0))
        for t in range(tgt_len):
            logits, hc = self._decode_step(dec_in[:, t], hc, enc_stack, attn_bias)
            nll_t = ad.cross_entropy(logits, tgt_ids[:, t])
            w = tgt_mask[:, t]
            if row_weights is not None:
                w = w * row_weights
            total = ad.add(total, ad.masked_sum(nll_t, w))
        return total

    # -- scoring -----------------------------------------------------------

    def log_prob_batch(self, sources: list[Sentence], targets: list[Sentence]) -> np.ndarray:
        """Teacher-forced total log-probabilities, one per (source, target)."""
        for s in sources + targets:
            if s.ids is None or len(s.ids) == 0:
                raise EmptySequenceError("log_prob needs numericalized, non-empty sentences")
        src_ids, src_mask = pad_batch([s.ids for s in sources])
        tgt_ids, tgt_mask = pad_batch([t.ids for t in targets])
        enc_stack, attn_bias, hc = self._encode(src_ids, src_mask)
        batch, tgt_len = tgt_ids.shape
        dec_in = np.concatenate(
            [np.full((batch, 1), BOS, dtype=np.int64), tgt_ids[:, :-1]], axis=1
        )
        out = np.zeros(batch)
        for t in range(tgt_len):
            logits, hc = self._decode_step(dec_in[:, t], hc, enc_stack, attn_bias)
            logp = _log_softmax_values(logits.value)
            out += logp[np.arange(batch), tgt_ids[:, t]] * tgt_mask[:, t]
        return out

    def log_prob(self, source: Sentence, target: Sentence) -> float:
        return float(self.log_prob_batch([source], [target])[0])

    # -- generation ---------------------------------------------------------

    def _run_decode(self, src_ids, src_mask, max_len: int, k: int,
                    rng: np.random.Generator | None, temperature: float):
        """Shared ancestral decode; ``rng is None`` means greedy argmax."""
        enc_stack, attn_bias, hc = self._encode(src_ids, src_mask)
        if k > 1:
            enc_stack = ad.repeat_rows(enc_stack, k)
            attn_bias = np.repeat(attn_bias, k, axis=0)
            hc = ad.repeat_rows(hc, k)
        rows = src_ids.shape[0] * k
        tok = np.full(rows, BOS, dtype=np.int64)
        active = np.ones(rows, dtype=bool)
        log_probs = np.zeros(rows)
        emitted: list[np.ndarray] = []
        for _ in range(max_len):
            logits, hc = self._decode_step(tok, hc, enc_stack, attn_bias)
            logp = _log_softmax_values(logits.value)
            if rng is None:
                chosen = logits.value.argmax(axis=1)
            else:
                scaled = logits.value / temperature if temperature != 1.0 else logits.value
                probs = _softmax_values(scaled)
                u = rng.random(rows)
                chosen = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
                chosen = np.minimum(chosen, logits.value.shape[1] - 1)
            chosen = np.where(active, chosen, PAD)
            log_probs += np.where(active, logp[np.arange(rows), chosen], 0.0)
            emitted.append(chosen)
            active &= chosen != EOS
            if not active.any():
                break
            tok = np.where(active, chosen, PAD)
        steps = np.stack(emitted, axis=1)  # (rows, <=max_len)
        return steps, log_probs

    def _rows_to_sentences(self, steps: np.ndarray) -> list[Sentence]:
        # Rows end at their first EOS; fill tokens past it are never collected.
        # Reserved ids drawn mid-sequence stay in place so that the sentence's
        # ids always rescore to the sampler's reported log-probability.
        out = []
        for row in steps:
            ids = []
            for tok in row:
                ids.append(int(tok))
                if tok == EOS:
                    break
            surface = tuple(self.vocab.token_of(i) for i in ids if i != EOS)
            out.append(Sentence(surface=surface, ids=tuple(ids)))
        return out

    def sample_batch(self, sources: list[Sentence], k: int,
                     rng: np.random.Generator, max_len: int | None = None,
                     temperature: float = 1.0) -> tuple[list[Sentence], np.ndarray]:
        """Draw k samples per source; returns row-major (source major) lists."""
        src_ids, src_mask = pad_batch([s.ids for s in sources])
        if max_len is None:
            max_len = _default_max_len(max(len(s.ids) for s in sources))
        steps, log_probs = self._run_decode(src_ids, src_mask, max_len, k, rng, temperature)
        return self._rows_to_sentences(steps), log_probs

    def sample(self, source: Sentence, k: int, cfg: DecodeConfig) -> SampleBatch:
        rng = np.random.default_rng(cfg.seed)
        max_len = cfg.max_len or _default_max_len(len(source.ids))
        sents, logps = self.sample_batch([source], k, rng, max_len, cfg.temperature)
        return SampleBatch(sentences=sents, log_probs=logps)

    def greedy_decode_batch(self, sources: list[Sentence],
                            max_len: int | None = None) -> list[Sentence]:
        src_ids, src_mask = pad_batch([s.ids for s in sources])
        if max_len is None:
            max_len = _default_max_len(max(len(s.ids) for s in sources))
        steps, _ = self._run_decode(src_ids, src_mask, max_len, 1, None, 1.0)
        return self._rows_to_sentences(steps)

    def greedy_decode(self, source: Sentence, cfg: DecodeConfig | None = None) -> Sentence:
        cfg = cfg or DecodeConfig()
        if source.ids is None or len(source.ids) == 0:
            raise EmptySequenceError("cannot decode from an empty source")
        max_len = cfg.max_len or _default_max_len(len(source.ids))
        if cfg.beam_width > 1:
            return self.beam_decode(source, cfg)
        return self.greedy_decode_batch([source], max_len)[0]

    def beam_decode(self, source: Sentence, cfg: DecodeConfig) -> Sentence:
        """Plain beam search by total log-probability; width 1 equals greedy."""
        width = cfg.beam_width
        max_len = cfg.max_len or _default_max_len(len(source.ids))
        src_ids, src_mask = pad_batch([source.ids])
        enc_stack, attn_bias, hc = self._encode(src_ids, src_mask)
        beams = [([BOS], 0.0, hc, False)]  # (prefix, score, state, done)
        for _ in range(max_len):
            if all(b[3] for b in beams):
                break
            candidates = []
            for prefix, score, state, done in beams:
                if done:
                    candidates.append((score, prefix, state, True))
                    continue
                tok = np.array([prefix[-1]], dtype=np.int64)
                logits, new_state = self._decode_step(tok, state, enc_stack, attn_bias)
                logp = _log_softmax_values(logits.value)[0]
                order = np.argsort(-logp, kind="stable")[:width]
                for tok_id in order:
                    candidates.append(
                        (score + float(logp[tok_id]), prefix + [int(tok_id)],
                         new_state, tok_id == EOS)
                    )
            candidates.sort(key=lambda cand: (-cand[0], cand[1]))
            beams = [(p, s, st, d) for (s, p, st, d) in candidates[:width]]
        prefix = beams[0][0][1:]  # drop BOS
        surface = tuple(self.vocab.token_of(i) for i in prefix if i != EOS)
        return Sentence(surface=surface, ids=tuple(prefix))

    # -- training -----------------------------------------------------------

    def mle_step(self, pairs: list[tuple[Sentence, Sentence]], opt: AdamState,
                 grad_clip: float = 5.0) -> float:
        """One Adam update on mean per-token cross-entropy; returns pre-update loss."""
        sources = [p[0] for p in pairs]
        targets = [p[1] for p in pairs]
        src_ids, src_mask = pad_batch([s.ids for s in sources])
        tgt_ids, tgt_mask = pad_batch([t.ids for t in targets])
        n_tokens = tgt_mask.sum()
        zero_grads(self.params)
        with ad.Tape() as tape:
            total = self._teacher_forced_nll(src_ids, src_mask, tgt_ids, tgt_mask)
            loss = ad.scale(total, 1.0 / n_tokens)
        ad.backward(tape, loss)
        grads = collect_grads(self.params)
        zero_grads(self.params)
        clip_global_norm(grads, grad_clip)
        adam_step(self.params, grads, opt)
        return float(loss.value)

    def mean_nll(self, pairs: list[tuple[Sentence, Sentence]]) -> float:
        """Mean per-token NLL without updating (for perplexity tracking)."""
        sources = [p[0] for p in pairs]
        targets = [p[1] for p in pairs]
        logp = self.log_prob_batch(sources, targets)
        n_tokens = sum(len(t.ids) for t in targets)
        return float(-logp.sum() / n_tokens)

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.value = arrays[k].copy()

    def clone(self) -> "Seq2Seq":
        other = Seq2Seq.__new__(Seq2Seq)
        other.vocab = self.vocab
        other.embed_dim = self.embed_dim
        other.hidden_dim = self.hidden_dim
        other.direction = self.direction
        other.params = {k: ad.parameter(v.value.copy()) for k, v in self.params.items()}
        return other

    def save(self, path) -> None:
        meta = {
            "kind": "seq2seq",
            "direction": self.direction,
            "vocab_hash": self.vocab.content_hash(),
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
        }
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "Seq2Seq":
        arrays, meta = load_checkpoint(path)
        if meta.get("vocab_hash") != vocab.content_hash():
            raise ValueError("checkpoint was built with a different vocabulary")
        model = cls(vocab, embed_dim=meta["embed_dim"], hidden_dim=meta["hidden_dim"],
                    direction=meta.get("direction", "x2y"), seed=0)
        model.load_state_dict(arrays)
        return model


def _softmax_values(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _log_softmax_values(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
