"""Training configuration, combined objective, and the optimization loop."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Example, Vocabulary
from .losses import ce_intent_loss, ce_slot_loss
from .metrics import MetricsReport, evaluate
from .model import JointNluModel, TokenBatch, build_model, make_batch
from .sampling import proportional_validation
from .vat import VatConfig, heads_for_loss, vat_loss

VALID_LOSSES = ("ce-int", "ce-slot", "vat-int", "vat-slot", "vat-joint")
DEV_SIZES = {"atis": 500, "snips": 700}


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the last good state for recovery."""

    def __init__(self, message: str, best_state=None, history=None):
        super().__init__(message)
        self.best_state = best_state
        self.history = history or []


@dataclass
class RunConfig:
    losses: tuple[str, ...] = ("ce-int", "ce-slot")
    dataset: str = ""
    seed: int = 0
    embedding_dim: int = 300
    hidden_size: int = 128
    n_layers: int = 1
    slot_embedding_dim: int = 128
    attention_dim: int | None = None
    attention: str = "additive"
    dropout_classifier: float = 0.5
    dropout_embedding: float | None = None  # resolved: 0 under adversarial training
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int | None = None               # resolved: 60 adversarial / 100 plain
    batch_size: int | None = None           # resolved: 64 adversarial or snips / 16
    grad_clip: float = 5.0
    vat: VatConfig = field(default_factory=VatConfig)
    validation: str = "proportional"        # proportional | full-dev | none
    fraction: float | None = None
    dev_size_reference: int | None = None

    def __post_init__(self):
        self.losses = tuple(self.losses)
        unknown = [l for l in self.losses if l not in VALID_LOSSES]
        if unknown:
            raise ValueError(f"unknown losses {unknown}; valid: {VALID_LOSSES}")
        if sum(1 for l in self.losses if l.startswith("vat")) > 1:
            raise ValueError("at most one adversarial loss term may be enabled")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.n_layers != 1:
            raise ValueError("only single-layer encoders are supported")

    def uses_vat(self) -> bool:
        return any(l.startswith("vat") for l in self.losses)

    def vat_heads(self) -> tuple[str, ...]:
        for l in self.losses:
            if l.startswith("vat"):
                return heads_for_loss(l)
        raise ValueError("no adversarial loss configured")

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 60 if self.uses_vat() else 100

    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 64 if self.uses_vat() or self.dataset == "snips" else 16

    def resolved_dropout_embedding(self) -> float:
        if self.dropout_embedding is not None:
            return self.dropout_embedding
        return 0.0 if self.uses_vat() else 0.5

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = {
            "losses": list(self.losses),
            "dataset": self.dataset,
            "seed": self.seed,
            "embedding_dim": self.embedding_dim,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "slot_embedding_dim": self.slot_embedding_dim,
            "attention_dim": self.attention_dim,
            "attention": self.attention,
            "dropout_classifier": self.dropout_classifier,
            "dropout_embedding": self.resolved_dropout_embedding(),
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "epochs": self.resolved_epochs(),
            "batch_size": self.resolved_batch_size(),
            "grad_clip": self.grad_clip,
            "validation": self.validation,
            "fraction": self.fraction,
            "vat": self.vat.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "losses" in d:
            d["losses"] = tuple(d["losses"])
        if isinstance(d.get("vat"), dict):
            d["vat"] = VatConfig(**d["vat"])
        return cls(**d)


def total_loss(
    batch: TokenBatch,
    model: JointNluModel,
    model_hat: JointNluModel,
    config: RunConfig,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Sum of the enabled loss terms plus a per-term breakdown.

    Cross-entropy terms run teacher-forced over the labeled members only
    (zero, flagged, when the batch has none); the adversarial term covers
    every batch member.
    """
    parts: dict[str, torch.Tensor] = {}
    flags: dict[str, bool] = {}

    ce_names = [l for l in config.losses if l.startswith("ce")]
    if ce_names:
        if bool(batch.labeled.any()):
            sub = batch.select_rows(batch.labeled)
            out = model(
                sub.word_ids, sub.lengths,
                conditioning="teacher", slot_tags=sub.slot_ids,
            )
            if "ce-int" in ce_names:
                parts["ce-int"] = ce_intent_loss(out, sub.intent_ids)
            if "ce-slot" in ce_names:
                parts["ce-slot"] = ce_slot_loss(out, sub.slot_ids)
        else:
            zero = next(model.parameters()).sum() * 0.0
            for name in ce_names:
                parts[name] = zero
                flags[f"{name}-empty"] = True

    for name in config.losses:
        if name.startswith("vat"):
            parts[name] = vat_loss(
                batch, model_hat, model, config.vat,
                heads=heads_for_loss(name), generator=generator,
            )

    loss = sum(parts.values())
    if not torch.isfinite(loss):
        detail = {k: v.item() for k, v in parts.items()}
        raise TrainingDivergedError(
            f"non-finite loss {loss.item()}; parts={detail}; batch={len(batch)}"
        )
    return loss, {"parts": parts, "flags": flags}


def _selection_score(report: MetricsReport, config: RunConfig) -> float:
    """Validation score for checkpoint selection: accuracy + F1/100 over the
    supervised heads actually being trained."""
    use_int = "ce-int" in config.losses
    use_slot = "ce-slot" in config.losses
    if not (use_int or use_slot):
        use_int = use_slot = True
    score = 0.0
    if use_int:
        score += report.intent_accuracy
    if use_slot:
        score += report.slot_f1 / 100.0
    return score


def fit(
    train_examples: Sequence[Example],
    labeled_ids: Sequence[int],
    unlabeled_ids: Sequence[int],
    vocab: Vocabulary,
    config: RunConfig,
    embedding_matrix=None,
    dev_examples: Sequence[Example] | None = None,
) -> tuple[JointNluModel, list[dict]]:
    """Train per the configuration and return (best model, epoch history).

    Adversarial epochs shuffle one pass over labeled + unlabeled together;
    plain epochs pass over the labeled set only.  The checkpoint with the
    best validation score is restored at the end.
    """
    if not labeled_ids:
        raise ValueError("labeled set is empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed + 1)

    by_id = {ex.id: ex for ex in train_examples}
    labeled_ids = sorted(labeled_ids)
    unlabeled_ids = sorted(unlabeled_ids)

    if config.validation == "proportional":
        fraction = config.fraction
        if fraction is None:
            fraction = 100.0 * len(labeled_ids) / max(len(train_examples), 1)
        dev_ref = config.dev_size_reference or DEV_SIZES.get(
            config.dataset, max(1, len(train_examples) // 10)
        )
        train_lab, val_ids = proportional_validation(
            labeled_ids, fraction, dev_ref, config.seed
        )
        val_examples = [by_id[i] for i in val_ids]
    elif config.validation == "full-dev":
        if not dev_examples:
            raise ValueError("full-dev validation requires dev_examples")
        train_lab, val_examples = list(labeled_ids), list(dev_examples)
    elif config.validation == "none":
        train_lab, val_examples = list(labeled_ids), []
    else:
        raise ValueError(f"unknown validation mode {config.validation!r}")

    model = build_model(vocab, config, embedding_matrix)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    pool_ids = list(train_lab)
    if config.uses_vat():
        pool_ids += list(unlabeled_ids)
    labeled_set = set(train_lab)
    batch_size = config.resolved_batch_size()

    history: list[dict] = []
    best_score = -math.inf
    best_state = None
    best_report = None

    for epoch in range(config.resolved_epochs()):
        model.train()
        order = rng.permutation(len(pool_ids))
        sums: dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(pool_ids), batch_size):
            chunk = [by_id[pool_ids[int(i)]] for i in order[start:start + batch_size]]
            batch = make_batch(chunk, vocab, labeled_ids=labeled_set)
            optimizer.zero_grad()
            try:
                loss, detail = total_loss(batch, model, model, config, generator)
            except TrainingDivergedError as err:
                raise TrainingDivergedError(
                    f"epoch {epoch}: {err}", best_state=best_state, history=history
                ) from err
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            n_batches += 1
            sums["loss"] = sums.get("loss", 0.0) + loss.item()
            for name, value in detail["parts"].items():
                sums[name] = sums.get(name, 0.0) + value.item()

        row = {"epoch": epoch}
        row.update({k: v / max(n_batches, 1) for k, v in sums.items()})
        if val_examples:
            report = evaluate(model, val_examples, vocab, seed=config.seed)
            score = _selection_score(report, config)
            row["val_intent_accuracy"] = report.intent_accuracy
            row["val_slot_f1"] = report.slot_f1
            row["val_score"] = score
            if score > best_score:
                best_score = score
                best_state = copy.deepcopy(model.state_dict())
                best_report = report
        history.append(row)

    if best_state is not None:
        model.load_state_dict(best_state)
    if best_report is not None:
        best_report.loss_curves = history
    return model, history


def write_history_csv(history: Sequence[dict], path: str | Path) -> Path:
    """Per-epoch CSV: epoch, loss terms, validation metrics."""
    path = Path(path)
    fields: list[str] = []
    for row in history:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(history)
    return path
