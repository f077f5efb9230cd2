import math

import numpy as np
import pytest
import torch

from viraal.losses import ce_intent_loss, ce_slot_loss
from viraal.model import Posteriors


def posteriors_from_logits(int_logits, slot_logits, mask):
    log_p_int = torch.log_softmax(int_logits, dim=-1)
    log_p_slot = torch.log_softmax(slot_logits, dim=-1)
    return Posteriors(
        log_p_int=log_p_int,
        log_p_slot=log_p_slot,
        mask=mask,
        predicted_tags=log_p_slot.argmax(-1),
    )


def test_ce_intent_perfect_predictions():
    logits = torch.tensor([[1000.0, 0.0], [0.0, 1000.0]], dtype=torch.float64)
    post = posteriors_from_logits(logits, torch.zeros((2, 1, 3), dtype=torch.float64),
                                  torch.ones((2, 1), dtype=torch.bool))
    loss = ce_intent_loss(post, torch.tensor([0, 1]))
    assert float(loss) == 0.0


def test_ce_intent_uniform_over_18():
    logits = torch.zeros((4, 18), dtype=torch.float64)
    post = posteriors_from_logits(logits, torch.zeros((4, 1, 3), dtype=torch.float64),
                                  torch.ones((4, 1), dtype=torch.bool))
    loss = ce_intent_loss(post, torch.tensor([3, 7, 0, 17]))
    assert float(loss) == pytest.approx(math.log(18), abs=1e-12)


def test_ce_intent_matches_hand_nll():
    rng = np.random.default_rng(0)
    logits = torch.tensor(rng.normal(size=(3, 4)))
    gold = torch.tensor([2, 0, 3])
    post = posteriors_from_logits(logits, torch.zeros((3, 1, 3), dtype=torch.float64),
                                  torch.ones((3, 1), dtype=torch.bool))
    loss = float(ce_intent_loss(post, gold))

    arr = logits.numpy()
    p = np.exp(arr - arr.max(axis=1, keepdims=True))
    p = p / p.sum(axis=1, keepdims=True)
    oracle = -np.mean([np.log(p[i, g]) for i, g in enumerate(gold.tolist())])
    assert loss == pytest.approx(oracle, abs=1e-12)


def test_ce_intent_skips_unlabeled_rows():
    logits = torch.tensor([[1000.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    post = posteriors_from_logits(logits, torch.zeros((2, 1, 3), dtype=torch.float64),
                                  torch.ones((2, 1), dtype=torch.bool))
    loss = ce_intent_loss(post, torch.tensor([0, -1]))  # second row unlabeled
    assert float(loss) == 0.0


def test_ce_intent_empty_labeled_is_zero():
    logits = torch.zeros((2, 3), dtype=torch.float64)
    post = posteriors_from_logits(logits, torch.zeros((2, 1, 3), dtype=torch.float64),
                                  torch.ones((2, 1), dtype=torch.bool))
    loss = ce_intent_loss(post, torch.tensor([-1, -1]))
    assert float(loss.detach()) == 0.0


def test_ce_slot_perfect_predictions():
    logits = torch.full((1, 2, 3), -1000.0, dtype=torch.float64)
    logits[0, 0, 1] = 1000.0
    logits[0, 1, 2] = 1000.0
    post = posteriors_from_logits(torch.zeros((1, 2), dtype=torch.float64), logits,
                                  torch.ones((1, 2), dtype=torch.bool))
    loss = ce_slot_loss(post, torch.tensor([[1, 2]]))
    assert float(loss) == 0.0


def test_ce_slot_uniform_127():
    logits = torch.zeros((2, 3, 127), dtype=torch.float64)
    mask = torch.tensor([[True, True, True], [True, True, False]])
    post = posteriors_from_logits(torch.zeros((2, 2), dtype=torch.float64), logits, mask)
    gold = torch.tensor([[5, 9, 100], [3, 14, -1]])
    loss = ce_slot_loss(post, gold)
    assert float(loss) == pytest.approx(math.log(127), abs=1e-12)


def test_ce_slot_double_average_oracle():
    """Variable lengths T=2 and T=3: mean over tokens within each utterance,
    then over utterances, recomputed by hand."""
    rng = np.random.default_rng(4)
    logits = torch.tensor(rng.normal(size=(2, 3, 4)))
    mask = torch.tensor([[True, True, False], [True, True, True]])
    gold = torch.tensor([[1, 3, -1], [0, 2, 1]])
    post = posteriors_from_logits(torch.zeros((2, 2), dtype=torch.float64), logits, mask)
    loss = float(ce_slot_loss(post, gold))

    arr = logits.numpy()
    p = np.exp(arr - arr.max(axis=2, keepdims=True))
    p = p / p.sum(axis=2, keepdims=True)
    utt0 = -(np.log(p[0, 0, 1]) + np.log(p[0, 1, 3])) / 2
    utt1 = -(np.log(p[1, 0, 0]) + np.log(p[1, 1, 2]) + np.log(p[1, 2, 1])) / 3
    assert loss == pytest.approx((utt0 + utt1) / 2, abs=1e-12)


def test_ce_slot_ignores_padded_positions():
    logits = torch.zeros((1, 3, 4), dtype=torch.float64)
    logits[0, 2] = torch.tensor([999.0, -999.0, 0.0, 0.0])  # padded step, e.g. garbage
    mask = torch.tensor([[True, True, False]])
    post = posteriors_from_logits(torch.zeros((1, 2), dtype=torch.float64), logits, mask)
    loss_with = float(ce_slot_loss(post, torch.tensor([[1, 2, -1]])))
    assert loss_with == pytest.approx(math.log(4), abs=1e-12)
