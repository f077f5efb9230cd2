"""Evaluation: exact-match intent accuracy and token-level micro slot F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Example, Vocabulary
from .model import JointNluModel, make_batch, predict

OUTSIDE_TAG = "O"


@dataclass
class MetricsReport:
    intent_accuracy: float        # fraction in [0, 1]
    slot_f1: float                # percentage points in [0, 100]
    slot_precision: float = 0.0
    slot_recall: float = 0.0
    n_examples: int = 0
    seed: int | None = None
    loss_curves: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "intent_accuracy": self.intent_accuracy,
            "slot_f1": self.slot_f1,
            "slot_precision": self.slot_precision,
            "slot_recall": self.slot_recall,
            "n_examples": self.n_examples,
            "seed": self.seed,
        }


def token_micro_f1(
    gold: Sequence[Sequence[str]],
    pred: Sequence[Sequence[str]],
    outside: str = OUTSIDE_TAG,
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 (percent) over non-outside tokens."""
    tp = fp = fn = 0
    for g_seq, p_seq in zip(gold, pred):
        if len(g_seq) != len(p_seq):
            raise ValueError(f"length mismatch: {len(g_seq)} gold vs {len(p_seq)} predicted")
        for g, p in zip(g_seq, p_seq):
            if p != outside:
                if p == g:
                    tp += 1
                else:
                    fp += 1
            if g != outside and p != g:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return 100.0 * precision, 100.0 * recall, 100.0 * f1


def evaluate(
    model: JointNluModel,
    examples: Sequence[Example],
    vocab: Vocabulary,
    batch_size: int = 64,
    seed: int | None = None,
) -> MetricsReport:
    """Greedy-decode `examples` and score both tasks; all must be annotated."""
    if not examples:
        raise ValueError("cannot evaluate on an empty example set")
    slot_names = vocab.slot_names()
    intent_hits = 0
    gold_tags: list[list[str]] = []
    pred_tags: list[list[str]] = []

    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        # gold stays string-side: tags unseen in training must score as misses,
        # not crash the id lookup
        batch = make_batch(chunk, vocab, labeled_ids=set())
        intents, slot_seqs = predict(model, batch)
        for ex, intent_idx, slots in zip(chunk, intents, slot_seqs):
            if ex.annotation is None:
                raise ValueError(f"example {ex.id} is unlabeled; evaluation needs gold")
            if vocab.intent_index.get(ex.annotation.intent, -1) == intent_idx:
                intent_hits += 1
            gold_tags.append(list(ex.annotation.slots))
            pred_tags.append([slot_names[s] for s in slots])

    precision, recall, f1 = token_micro_f1(gold_tags, pred_tags)
    return MetricsReport(
        intent_accuracy=intent_hits / len(examples),
        slot_f1=f1,
        slot_precision=precision,
        slot_recall=recall,
        n_examples=len(examples),
        seed=seed,
    )
