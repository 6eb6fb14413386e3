"""Convolutional binary style classifier; frozen after pre-training.

The classifier provides P(style | sentence) both for the style reward during
dual training and for the ACC metric.  Its embeddings are independent of the
transfer models so the reward cannot drift with the policies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import EOS, PAD, Sentence, StyleCorpus, StyleLabel, Vocabulary
from .errors import EmptyListError, EmptySequenceError
from .optim import AdamState, adam_step, clip_global_norm, collect_grads, zero_grads


@dataclass
class ClassifierConfig:
    embed_dim: int = 64
    channels: int = 32
    widths: tuple[int, ...] = (1, 2, 3)
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 8
    grad_clip: float = 5.0
    seed: int = 0


class TextClassifier:
    """Parallel convolutions over token embeddings, max-pooled, to 2 logits."""

    def __init__(self, vocab: Vocabulary, cfg: ClassifierConfig | None = None):
        self.cfg = cfg or ClassifierConfig()
        self.vocab = vocab
        self.frozen = False
        rng = np.random.default_rng(self.cfg.seed)
        v, e, ch = len(vocab), self.cfg.embed_dim, self.cfg.channels
        self.params: dict[str, ad.Tensor] = {
            "embed": ad.parameter(rng.normal(0.0, 0.01, (v, e))),
        }
        for w in self.cfg.widths:
            self.params[f"conv{w}_w"] = ad.parameter(rng.uniform(-0.08, 0.08, (w, e, ch)))
            self.params[f"conv{w}_b"] = ad.parameter(np.zeros(ch))
        feat = ch * len(self.cfg.widths)
        self.params["lin_w"] = ad.parameter(rng.uniform(-0.08, 0.08, (feat, 2)))
        self.params["lin_b"] = ad.parameter(np.zeros(2))

    def _prepare(self, sentences: list[Sentence]) -> tuple[np.ndarray, np.ndarray]:
        """Content ids (EOS stripped), right-padded to at least the widest filter."""
        min_len = max(self.cfg.widths)
        rows = []
        for s in sentences:
            ids = [i for i in (s.ids or ()) if i != EOS]
            if not ids:
                raise EmptySequenceError("cannot classify an empty sentence")
            rows.append(ids)
        lengths = np.array([max(len(r), min_len) for r in rows])
        width = int(lengths.max())
        ids = np.full((len(rows), width), PAD, dtype=np.int64)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = r
        return ids, lengths

    def _logits(self, ids: np.ndarray, lengths: np.ndarray) -> ad.Tensor:
        emb = ad.embedding(self.params["embed"], ids)  # (B, T, E)
        pooled = []
        for w in self.cfg.widths:
            conv = ad.add(ad.conv1d(emb, self.params[f"conv{w}_w"]),
                          self.params[f"conv{w}_b"])
            conv = ad.relu(conv)
            n_windows = ids.shape[1] - w + 1
            valid = np.arange(n_windows)[None, :] <= (lengths[:, None] - w)
            pooled.append(ad.max_over_time(conv, valid))
        features = ad.concat(pooled, axis=1)
        return ad.add(ad.matmul(features, self.params["lin_w"]), self.params["lin_b"])

    def classify_prob_batch(self, sentences: list[Sentence]) -> np.ndarray:
        """Softmax over the two style classes, one row per sentence."""
        ids, lengths = self._prepare(sentences)
        logits = self._logits(ids, lengths).value
        shifted = logits - logits.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        return ex / ex.sum(axis=1, keepdims=True)

    def classify_prob(self, sentence: Sentence) -> np.ndarray:
        return self.classify_prob_batch([sentence])[0]

    def predict(self, sentences: list[Sentence]) -> np.ndarray:
        """Argmax class per sentence; exact ties resolve to class 0."""
        probs = self.classify_prob_batch(sentences)
        return np.where(probs[:, 1] > probs[:, 0], 1, 0)

    def freeze(self) -> None:
        self.frozen = True

    def train_batch(self, sentences: list[Sentence], labels: np.ndarray,
                    opt: AdamState) -> float:
        if self.frozen:
            raise RuntimeError("classifier is frozen")
        ids, lengths = self._prepare(sentences)
        zero_grads(self.params)
        with ad.Tape() as tape:
            logits = self._logits(ids, lengths)
            nll = ad.cross_entropy(logits, labels)
            loss = ad.scale(ad.sum_all(nll), 1.0 / len(sentences))
        ad.backward(tape, loss)
        grads = collect_grads(self.params)
        zero_grads(self.params)
        clip_global_norm(grads, self.cfg.grad_clip)
        adam_step(self.params, grads, opt)
        return float(loss.value)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.value = arrays[k].copy()

    def save(self, path) -> None:
        meta = {
            "kind": "cls",
            "vocab_hash": self.vocab.content_hash(),
            "embed_dim": self.cfg.embed_dim,
            "channels": self.cfg.channels,
            "widths": list(self.cfg.widths),
            "frozen": self.frozen,
        }
        save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "TextClassifier":
        arrays, meta = load_checkpoint(path)
        if meta.get("vocab_hash") != vocab.content_hash():
            raise ValueError("checkpoint was built with a different vocabulary")
        cfg = ClassifierConfig(embed_dim=meta["embed_dim"], channels=meta["channels"],
                               widths=tuple(meta["widths"]))
        clf = cls(vocab, cfg)
        clf.load_state_dict(arrays)
        clf.frozen = bool(meta.get("frozen", False))
        return clf


def train_classifier(corpus: StyleCorpus, vocab: Vocabulary,
                     cfg: ClassifierConfig | None = None) -> tuple[TextClassifier, float]:
    """Cross-entropy training on (sentence, style) pairs.

    Returns the best-dev-accuracy snapshot, already frozen, plus that
    accuracy.  Falls back to the final epoch when there is no dev split.
    """
    cfg = cfg or ClassifierConfig()
    clf = TextClassifier(vocab, cfg)
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)

    train_items = [(vocab.to_ids(s) if s.ids is None else s, lab.index)
                   for lab in corpus.labels()
                   for s in corpus.of(lab, "train")]
    dev_items = [(vocab.to_ids(s) if s.ids is None else s, lab.index)
                 for lab in corpus.labels()
                 for s in corpus.of(lab, "dev")]

    best_acc, best_state = -1.0, None
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_items))
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo: lo + cfg.batch_size]
            sents = [train_items[i][0] for i in chunk]
            labels = np.array([train_items[i][1] for i in chunk])
            clf.train_batch(sents, labels, opt)
        if dev_items:
            preds = clf.predict([s for s, _ in dev_items])
            acc = float((preds == np.array([lab for _, lab in dev_items])).mean())
            if acc > best_acc:
                best_acc = acc
                best_state = clf.state_dict()
    if best_state is not None:
        clf.load_state_dict(best_state)
    elif dev_items:
        best_acc = 0.0
    clf.freeze()
    return clf, best_acc


def style_accuracy(clf: TextClassifier, sentences: list[Sentence],
                   target: StyleLabel) -> float:
    """Fraction of sentences whose argmax class is the target style."""
    if not sentences:
        raise EmptyListError("style_accuracy needs at least one sentence")
    preds = clf.predict(sentences)
    return float((preds == target.index).mean())
