import pytest
import torch

from viraal.corpus import Annotation, Example, Utterance, build_vocab
from viraal.model import JointNluModel
from viraal.toy import toy_corpus


def micro_examples():
    """Four hand-written examples: 2 intents, 3 slot tags, 8 distinct words."""
    rows = [
        (["show", "flights", "to", "reno"], ["O", "O", "O", "B-city"], "flights"),
        (["show", "fares", "to", "lima"], ["O", "O", "O", "B-city"], "fares"),
        (["flights", "from", "reno"], ["O", "O", "B-origin"], "flights"),
        (["fares", "from", "lima"], ["O", "O", "B-origin"], "fares"),
    ]
    return [
        Example(
            utterance=Utterance(id=i, tokens=tuple(toks)),
            annotation=Annotation(intent=intent, slots=tuple(slots)),
            split="train",
        )
        for i, (toks, slots, intent) in enumerate(rows)
    ]


def tiny_model(vocab, dtype=torch.float64, seed=0, dropout=0.0):
    """Sub-500-parameter model for finite-difference checks."""
    torch.manual_seed(seed)
    model = JointNluModel(
        n_words=vocab.n_words,
        n_intents=vocab.n_intents,
        n_slots=vocab.n_slots,
        embedding_dim=4,
        hidden_size=2,
        slot_embedding_dim=2,
        attention_dim=2,
        dropout_embedding=dropout,
        dropout_classifier=dropout,
    )
    return model.to(dtype)


@pytest.fixture(scope="session")
def micro():
    examples = micro_examples()
    return examples, build_vocab(examples)


@pytest.fixture(scope="session")
def toy():
    train, test = toy_corpus(n_train=60, n_test=24, seed=0)
    return train, test, build_vocab(train)


@pytest.fixture()
def small_model(micro):
    _, vocab = micro
    return tiny_model(vocab)
