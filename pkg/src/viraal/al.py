"""Entropy-based pool scoring and query selection.

Confidence is negative posterior entropy: the intent head's entropy for
intent confidence, the per-token mean of slot entropies for slot
confidence.  Joint scores normalize each task's entropies by their 99th
pool percentile before summing, and querying takes the lowest-confidence
examples.  Scoring is per-sample (linear in the pool), with no pairwise
diversity terms.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Example, Vocabulary
from .model import JointNluModel, eval_mode, make_batch

CRITERIA = ("random", "entropy-int", "entropy-slot", "entropy-joint")
JOINT_MODES = ("entropy-percentile", "literal")
PERCENTILE_FLOOR = 1e-8


@dataclass
class ConfidenceRecord:
    example_id: int
    conf_int: float            # -H(p_int), in [-log |I|, 0]
    conf_slot: float           # mean over real tokens of -H(p_slot_t)
    conf_joint: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.example_id,
            "conf_int": self.conf_int,
            "conf_slot": self.conf_slot,
            "conf_joint": self.conf_joint,
        }


@dataclass
class QuerySpec:
    criterion: str
    budget: int
    seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.budget <= 0:
            raise ValueError(f"budget must be positive, got {self.budget}")


def entropy(p) -> float:
    """-sum p log p with 0 log 0 = 0; rejects negative entries."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("entropy expects a 1-D probability vector")
    if (arr < 0).any():
        raise ValueError("negative probability entries")
    total = arr.sum()
    if not np.isclose(total, 1.0, atol=1e-4):
        raise ValueError(f"probabilities sum to {total}, not 1")
    nz = arr[arr > 0]
    return float(max(-(nz * np.log(nz)).sum(), 0.0))


def _masked_entropies(log_p: torch.Tensor) -> torch.Tensor:
    # log_p [..., K] -> entropy over the last dim, computed in log space
    return -(log_p.exp() * log_p).sum(dim=-1)


def score_pool(
    model: JointNluModel,
    pool: Sequence[Example],
    vocab: Vocabulary,
    batch_size: int = 64,
) -> list[ConfidenceRecord]:
    """One confidence record per pool example, greedy decoding, no dropout."""
    if not pool:
        raise ValueError("cannot score an empty pool")
    records: list[ConfidenceRecord] = []
    with eval_mode(model), torch.no_grad():
        for start in range(0, len(pool), batch_size):
            chunk = pool[start:start + batch_size]
            batch = make_batch(chunk, vocab)
            out = model(batch.word_ids, batch.lengths, conditioning="greedy")
            h_int = _masked_entropies(out.log_p_int.double())          # [B]
            h_slot = _masked_entropies(out.log_p_slot.double())       # [B, T]
            mask = out.mask.double()
            mean_h_slot = (h_slot * mask).sum(dim=1) / mask.sum(dim=1)
            for ex, hi, hs in zip(chunk, h_int.tolist(), mean_h_slot.tolist()):
                records.append(
                    ConfidenceRecord(example_id=ex.id, conf_int=-hi, conf_slot=-hs)
                )
    return records


def joint_confidence(
    records: Sequence[ConfidenceRecord], mode: str = "entropy-percentile"
) -> list[ConfidenceRecord]:
    """Fill conf_joint from percentile-normalized task scores.

    Default mode normalizes the (non-negative) entropies by their pool-wide
    99th percentiles and negates the sum, which keeps the quotients
    well-behaved near zero; `literal` divides the raw confidences by the
    confidence percentiles instead.
    """
    if mode not in JOINT_MODES:
        raise ValueError(f"mode must be one of {JOINT_MODES}")
    if len(records) < 2:
        raise ValueError("joint confidence needs at least 2 records")

    if mode == "literal":
        c_int = np.array([r.conf_int for r in records])
        c_slot = np.array([r.conf_slot for r in records])
        p_int = np.percentile(c_int, 99)
        p_slot = np.percentile(c_slot, 99)
        p_int = p_int if abs(p_int) > PERCENTILE_FLOOR else PERCENTILE_FLOOR
        p_slot = p_slot if abs(p_slot) > PERCENTILE_FLOOR else PERCENTILE_FLOOR
        joint = c_int / p_int + c_slot / p_slot
    else:
        e_int = np.array([-r.conf_int for r in records])
        e_slot = np.array([-r.conf_slot for r in records])
        p_int = max(np.percentile(e_int, 99), PERCENTILE_FLOOR)
        p_slot = max(np.percentile(e_slot, 99), PERCENTILE_FLOOR)
        joint = -(e_int / p_int + e_slot / p_slot)

    return [
        dataclasses.replace(r, conf_joint=float(j)) for r, j in zip(records, joint)
    ]


def select(records: Sequence[ConfidenceRecord], spec: QuerySpec) -> list[int]:
    """Return `budget` example ids: lowest confidence first, ties by id."""
    if spec.budget > len(records):
        raise ValueError(f"budget {spec.budget} exceeds pool size {len(records)}")

    if spec.criterion == "random":
        ids = sorted(r.example_id for r in records)
        rng = np.random.default_rng(spec.seed)
        picked = rng.choice(len(ids), size=spec.budget, replace=False)
        return [ids[int(i)] for i in picked]

    if spec.criterion == "entropy-joint":
        if any(r.conf_joint is None for r in records):
            records = joint_confidence(records) if len(records) >= 2 else [
                dataclasses.replace(records[0], conf_joint=records[0].conf_int)
            ]
        key = lambda r: (r.conf_joint, r.example_id)
    elif spec.criterion == "entropy-int":
        key = lambda r: (r.conf_int, r.example_id)
    else:
        key = lambda r: (r.conf_slot, r.example_id)

    ranked = sorted(records, key=key)
    return [r.example_id for r in ranked[: spec.budget]]


def dump_scored_pool(records: Sequence[ConfidenceRecord], path: str | Path) -> None:
    """Audit dump: one JSON record per example with its selection rank."""
    by_joint = sorted(
        records,
        key=lambda r: (r.conf_joint if r.conf_joint is not None else r.conf_int,
                       r.example_id),
    )
    rank = {r.example_id: i for i, r in enumerate(by_joint)}
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            rec = r.to_dict()
            rec["rank"] = rank[r.example_id]
            f.write(json.dumps(rec) + "\n")
