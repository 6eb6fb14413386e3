import math

import numpy as np
import pytest

from dualstyle.classifier import ClassifierConfig, TextClassifier, style_accuracy, train_classifier
from dualstyle.corpus import (
    Sentence,
    StyleCorpus,
    StyleLabel,
    SyntheticTaskSpec,
    build_vocab,
    generate_synthetic,
    lexicon_oracle_label,
)
from dualstyle.errors import EmptyListError, EmptySequenceError

from conftest import sentence


def zeroed_classifier(vocab) -> TextClassifier:
    clf = TextClassifier(vocab, ClassifierConfig(embed_dim=8, channels=4, seed=0))
    for p in clf.params.values():
        p.value = np.zeros_like(p.value)
    return clf


def test_zero_classifier_is_uniform(small_vocab):
    clf = zeroed_classifier(small_vocab)
    probs = clf.classify_prob(sentence(small_vocab, "a", "b"))
    assert np.allclose(probs, [0.5, 0.5], atol=1e-15)


def test_logit_gap_softmax_value(small_vocab):
    clf = zeroed_classifier(small_vocab)
    clf.params["lin_b"].value = np.array([2.0, 0.0])
    probs = clf.classify_prob(sentence(small_vocab, "c"))
    expect = math.exp(2.0) / (math.exp(2.0) + 1.0)
    assert abs(probs[0] - expect) < 1e-12
    assert abs(probs[0] - 0.881) < 1e-3
    assert abs(probs[1] - 0.119) < 1e-3


def test_probabilities_sum_to_one(small_vocab):
    clf = TextClassifier(small_vocab, ClassifierConfig(embed_dim=8, channels=4, seed=1))
    rng = np.random.default_rng(0)
    toks = ["a", "b", "c", "d", "e"]
    sents = [sentence(small_vocab, *(toks[int(rng.integers(5))]
                                     for _ in range(int(rng.integers(1, 8)))))
             for _ in range(50)]
    probs = clf.classify_prob_batch(sents)
    assert (probs > 0).all() and (probs < 1).all()
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-12


def test_empty_sentence_rejected(small_vocab):
    clf = zeroed_classifier(small_vocab)
    with pytest.raises(EmptySequenceError):
        clf.classify_prob(Sentence(surface=(), ids=(3,)))


def test_style_accuracy_counts(small_vocab):
    clf = zeroed_classifier(small_vocab)
    clf.params["lin_b"].value = np.array([0.0, 1.0])  # always class 1
    sents = [sentence(small_vocab, "a")] * 4
    assert style_accuracy(clf, sents, StyleLabel(1, "pos")) == 1.0
    assert style_accuracy(clf, sents, StyleLabel(0, "neg")) == 0.0


def test_tie_breaks_toward_first_style(small_vocab):
    clf = zeroed_classifier(small_vocab)
    sents = [sentence(small_vocab, "a", "b")] * 3
    assert style_accuracy(clf, sents, StyleLabel(0, "neg")) == 1.0
    assert style_accuracy(clf, sents, StyleLabel(1, "pos")) == 0.0


def test_mixed_accuracy_fraction(small_vocab):
    clf = zeroed_classifier(small_vocab)
    # widths (1,2,3) all-zero convs; route class via linear bias per call
    clf.params["lin_b"].value = np.array([0.0, 1.0])
    sents = [sentence(small_vocab, "a")] * 3
    probs_hit = clf.predict(sents)
    clf.params["lin_b"].value = np.array([1.0, 0.0])
    probs_miss = clf.predict([sentence(small_vocab, "b")])
    preds = np.concatenate([probs_hit, probs_miss])
    acc = float((preds == 1).mean())
    assert acc == 0.75


def test_style_accuracy_empty_list(small_vocab):
    clf = zeroed_classifier(small_vocab)
    with pytest.raises(EmptyListError):
        style_accuracy(clf, [], StyleLabel(0, "neg"))


def test_training_separable_task(tiny_task, tiny_classifier):
    corpus, gold, vocab = tiny_task
    dev = corpus.of(corpus.label_x, "dev") + corpus.of(corpus.label_y, "dev")
    labels = [0] * len(corpus.of(corpus.label_x, "dev")) + [1] * len(corpus.of(corpus.label_y, "dev"))
    preds = tiny_classifier.predict(dev)
    acc = float((preds == np.array(labels)).mean())
    assert acc >= 0.98


def test_agreement_with_lexicon_oracle(tiny_task, tiny_classifier):
    corpus, gold, vocab = tiny_task
    dev = corpus.of(corpus.label_x, "dev") + corpus.of(corpus.label_y, "dev")
    oracle = np.array([lexicon_oracle_label(s, gold) for s in dev])
    preds = tiny_classifier.predict(dev)
    assert float((preds == oracle).mean()) >= 0.98


def test_identical_corpora_chance_accuracy():
    spec = SyntheticTaskSpec(train_per_style=120, dev_per_style=40, test_per_style=10, seed=3)
    corpus, _ = generate_synthetic(spec)
    same = corpus.of(corpus.label_x, "train")
    same_dev = corpus.of(corpus.label_x, "dev")
    mirrored = StyleCorpus(corpus.label_x, corpus.label_y, {
        (corpus.label_x.name, "train"): same,
        (corpus.label_y.name, "train"): same,
        (corpus.label_x.name, "dev"): same_dev,
        (corpus.label_y.name, "dev"): same_dev,
    })
    vocab = build_vocab(mirrored.all_train())
    mirrored = mirrored.numericalize(vocab)
    _, dev_acc = train_classifier(mirrored, vocab,
                                  ClassifierConfig(embed_dim=12, channels=6, epochs=2, seed=0))
    assert abs(dev_acc - 0.5) <= 0.05


def test_frozen_classifier_rejects_training(tiny_task, tiny_classifier):
    corpus, _, vocab = tiny_task
    from dualstyle.optim import AdamState
    with pytest.raises(RuntimeError):
        tiny_classifier.train_batch([corpus.of(corpus.label_x, "dev")[0]],
                                    np.array([0]), AdamState())


def test_classifier_checkpoint_round_trip(tiny_task, tiny_classifier, tmp_path):
    _, _, vocab = tiny_task
    tiny_classifier.save(tmp_path / "cls.ckpt")
    loaded = TextClassifier.load(tmp_path / "cls.ckpt", vocab)
    assert loaded.frozen
    for k in tiny_classifier.params:
        assert np.array_equal(loaded.params[k].value, tiny_classifier.params[k].value)
