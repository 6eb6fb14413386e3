import numpy as np
import pytest

from dualstyle.classifier import ClassifierConfig, train_classifier
from dualstyle.corpus import Sentence, SyntheticTaskSpec, Vocabulary, build_vocab, generate_synthetic
from dualstyle.seq2seq import Seq2Seq

TINY_SPEC = SyntheticTaskSpec(
    train_per_style=300, dev_per_style=80, test_per_style=80,
    pair_count=8, rare_pair_count=2, rare_weight=0.5, seed=5,
)


@pytest.fixture(scope="session")
def tiny_task():
    corpus, gold = generate_synthetic(TINY_SPEC)
    vocab = build_vocab(corpus.all_train())
    return corpus.numericalize(vocab), gold, vocab


@pytest.fixture(scope="session")
def tiny_models(tiny_task):
    _, _, vocab = tiny_task
    model_f = Seq2Seq(vocab, embed_dim=24, hidden_dim=32, direction="x2y", seed=[5, 1])
    model_g = Seq2Seq(vocab, embed_dim=24, hidden_dim=32, direction="y2x", seed=[5, 2])
    return model_f, model_g


@pytest.fixture(scope="session")
def tiny_classifier(tiny_task):
    corpus, _, vocab = tiny_task
    cfg = ClassifierConfig(embed_dim=24, channels=12, epochs=3, seed=5)
    clf, dev_acc = train_classifier(corpus, vocab, cfg)
    assert dev_acc >= 0.9
    return clf


@pytest.fixture()
def small_vocab():
    return Vocabulary(["a", "b", "c", "d", "e"])


def sentence(vocab: Vocabulary, *tokens: str) -> Sentence:
    return vocab.to_ids(Sentence(surface=tuple(tokens)))
