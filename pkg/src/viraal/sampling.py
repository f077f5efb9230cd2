"""Labeled-subset sampling for low-data regimes.

Regime samples are drawn so that every intent is represented at least once
in the labeled set; slot-type coverage is deliberately not guaranteed.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .corpus import Example


class RegimeError(ValueError):
    """The requested labeled budget cannot satisfy the intent-coverage constraint."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_labeled_count(
    examples: Sequence[Example], count: int, seed: int
) -> tuple[list[int], list[int]]:
    """Pick `count` labeled example ids covering every intent; rest is the pool.

    Construction is rejection-free: one uniformly random example per intent
    first, then a uniform fill from the remainder.  Deterministic given seed.
    """
    ids = [ex.id for ex in examples]
    if count <= 0 or count > len(ids):
        raise RegimeError(f"labeled budget {count} outside (0, {len(ids)}]")

    by_intent: dict[str, list[int]] = {}
    for ex in examples:
        if ex.annotation is None:
            raise RegimeError(f"train example {ex.id} lacks an intent annotation")
        by_intent.setdefault(ex.annotation.intent, []).append(ex.id)

    if count < len(by_intent):
        raise RegimeError(
            f"labeled budget {count} cannot cover all {len(by_intent)} intents"
        )

    rng = np.random.default_rng(seed)
    labeled: set[int] = set()
    for intent in sorted(by_intent):
        members = by_intent[intent]
        labeled.add(members[int(rng.integers(len(members)))])

    remainder = [i for i in ids if i not in labeled]
    fill = count - len(labeled)
    if fill > 0:
        picked = rng.choice(len(remainder), size=fill, replace=False)
        labeled.update(remainder[int(j)] for j in picked)

    unlabeled = [i for i in ids if i not in labeled]
    return sorted(labeled), sorted(unlabeled)


def sample_regime(
    examples: Sequence[Example], fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Sample round(fraction% of the train set) labeled ids, intent-covering."""
    if not 0 < fraction <= 100:
        raise RegimeError(f"fraction must be in (0, 100], got {fraction}")
    count = round_half_up(fraction / 100.0 * len(examples))
    return sample_labeled_count(examples, count, seed)


def proportional_validation(
    labeled_ids: Sequence[int], fraction: float, dev_size: int, seed: int
) -> tuple[list[int], list[int]]:
    """Carve a validation subset out of the labeled ids.

    Its size scales with the regime: round(fraction% of the official dev-set
    size), at least 1 and at most half the labeled set.
    """
    n_val = round_half_up(fraction / 100.0 * dev_size)
    n_val = max(1, min(n_val, len(labeled_ids) // 2))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labeled_ids))
    val = sorted(labeled_ids[int(i)] for i in order[:n_val])
    train = sorted(set(labeled_ids) - set(val))
    return train, val


def extract_dev(
    examples: Sequence[Example], n_dev: int, seed: int
) -> tuple[list[Example], list[Example]]:
    """Carve a dev split of `n_dev` examples out of a train split."""
    if n_dev >= len(examples):
        raise RegimeError(f"dev size {n_dev} >= train size {len(examples)}")
    rng = np.random.default_rng(seed)
    dev_pos = set(int(i) for i in rng.choice(len(examples), size=n_dev, replace=False))
    train, dev = [], []
    for pos, ex in enumerate(examples):
        if pos in dev_pos:
            dev.append(Example(ex.utterance, ex.annotation, split="dev"))
        else:
            train.append(ex)
    return train, dev
