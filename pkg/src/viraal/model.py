"""Joint intent-detection / slot-filling network.

Bidirectional LSTM encoder over word embeddings; an additive-attention
intent head keyed by the final encoder state; a unidirectional LSTM slot
decoder fed the aligned encoder output, an attention context keyed by the
previous slot embedding, and that previous slot embedding itself.

An optional additive perturbation on the embedded inputs is supported for
adversarial regularization: it is applied right before the encoder and
nothing else in the computation changes.
"""

from __future__ import annotations

import copy
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import Example, Vocabulary

CHECKPOINT_VERSION = 1

CONDITIONING_MODES = ("teacher", "fixed", "greedy")


def first_argmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Argmax that provably breaks ties toward the lowest index."""
    peak = x.max(dim=dim, keepdim=True).values
    idx = torch.arange(x.size(dim), device=x.device)
    shape = [1] * x.dim()
    shape[dim] = x.size(dim)
    idx = idx.view(shape).expand_as(x)
    candidate = torch.where(x == peak, idx, torch.full_like(idx, x.size(dim)))
    return candidate.min(dim=dim).values


@contextmanager
def eval_mode(module: nn.Module):
    was_training = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(was_training)


@dataclass
class TokenBatch:
    """Padded id batch with per-example annotation columns (-1 where absent)."""

    word_ids: torch.Tensor   # [B, T] long
    lengths: torch.Tensor    # [B] long
    mask: torch.Tensor       # [B, T] bool
    intent_ids: torch.Tensor # [B] long, -1 if unlabeled
    slot_ids: torch.Tensor   # [B, T] long, -1 at pads / unlabeled rows
    labeled: torch.Tensor    # [B] bool
    example_ids: list[int]

    def __len__(self) -> int:
        return self.word_ids.size(0)

    @property
    def n_tokens(self) -> int:
        return int(self.lengths.sum())

    def select_rows(self, row_mask: torch.Tensor) -> "TokenBatch":
        idx = row_mask.nonzero(as_tuple=True)[0]
        return TokenBatch(
            word_ids=self.word_ids[idx],
            lengths=self.lengths[idx],
            mask=self.mask[idx],
            intent_ids=self.intent_ids[idx],
            slot_ids=self.slot_ids[idx],
            labeled=self.labeled[idx],
            example_ids=[self.example_ids[int(i)] for i in idx],
        )


def make_batch(
    examples: Sequence[Example],
    vocab: Vocabulary,
    labeled_ids: set[int] | None = None,
) -> TokenBatch:
    """Collate examples into a right-padded TokenBatch.

    An example counts as labeled when it has an annotation and either
    `labeled_ids` is None or contains its id.
    """
    if not examples:
        raise ValueError("cannot batch zero examples")
    lengths = [ex.utterance.length for ex in examples]
    t_max = max(lengths)
    b = len(examples)

    word_ids = torch.zeros((b, t_max), dtype=torch.long)
    slot_ids = torch.full((b, t_max), -1, dtype=torch.long)
    intent_ids = torch.full((b,), -1, dtype=torch.long)
    labeled = torch.zeros(b, dtype=torch.bool)

    for i, ex in enumerate(examples):
        t = ex.utterance.length
        word_ids[i, :t] = torch.tensor(vocab.word_ids(ex.tokens), dtype=torch.long)
        is_labeled = ex.annotation is not None and (
            labeled_ids is None or ex.id in labeled_ids
        )
        if is_labeled:
            labeled[i] = True
            intent_ids[i] = vocab.intent_id(ex.annotation.intent)
            slot_ids[i, :t] = torch.tensor(
                vocab.slot_ids(ex.annotation.slots), dtype=torch.long
            )

    lengths_t = torch.tensor(lengths, dtype=torch.long)
    mask = torch.arange(t_max).unsqueeze(0) < lengths_t.unsqueeze(1)
    return TokenBatch(
        word_ids=word_ids,
        lengths=lengths_t,
        mask=mask,
        intent_ids=intent_ids,
        slot_ids=slot_ids,
        labeled=labeled,
        example_ids=[ex.id for ex in examples],
    )


@dataclass
class Posteriors:
    """Intent and per-token slot posteriors (log space) plus the token mask."""

    log_p_int: torch.Tensor   # [B, I]
    log_p_slot: torch.Tensor  # [B, T, K]
    mask: torch.Tensor        # [B, T] bool
    predicted_tags: torch.Tensor  # [B, T] long, per-step argmax

    @property
    def p_int(self) -> torch.Tensor:
        return self.log_p_int.exp()

    @property
    def p_slot(self) -> torch.Tensor:
        return self.log_p_slot.exp()


class AdditiveAttention(nn.Module):
    """Single-head content attention: score = v . tanh(Wq q + Wk k_t)."""

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int):
        super().__init__()
        self.query_proj = nn.Linear(query_dim, attn_dim, bias=False)
        self.key_proj = nn.Linear(key_dim, attn_dim, bias=False)
        self.score = nn.Linear(attn_dim, 1, bias=False)

    def forward(self, query, keys, mask):
        # query [B, Q], keys [B, T, K], mask [B, T] -> context [B, K]
        scores = self.score(
            torch.tanh(self.query_proj(query).unsqueeze(1) + self.key_proj(keys))
        ).squeeze(-1)
        scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return torch.bmm(weights.unsqueeze(1), keys).squeeze(1), weights


class JointNluModel(nn.Module):
    def __init__(
        self,
        n_words: int,
        n_intents: int,
        n_slots: int,
        embedding_dim: int = 300,
        hidden_size: int = 128,
        slot_embedding_dim: int = 128,
        attention_dim: int | None = None,
        dropout_embedding: float = 0.5,
        dropout_classifier: float = 0.5,
        normalize_embeddings: bool = False,
        pad_id: int = 0,
    ):
        super().__init__()
        self.hparams = {
            "n_words": n_words,
            "n_intents": n_intents,
            "n_slots": n_slots,
            "embedding_dim": embedding_dim,
            "hidden_size": hidden_size,
            "slot_embedding_dim": slot_embedding_dim,
            "attention_dim": attention_dim,
            "dropout_embedding": dropout_embedding,
            "dropout_classifier": dropout_classifier,
            "normalize_embeddings": normalize_embeddings,
            "pad_id": pad_id,
        }
        self.n_words = n_words
        self.n_intents = n_intents
        self.n_slots = n_slots
        self.pad_id = pad_id
        self.bos_slot_id = n_slots  # reserved embedding row, never a target
        self.normalize_embeddings = normalize_embeddings

        attn_dim = attention_dim or hidden_size
        enc_dim = 2 * hidden_size

        self.word_embedding = nn.Embedding(n_words, embedding_dim)
        with torch.no_grad():
            self.word_embedding.weight[pad_id].zero_()
        self.slot_embedding = nn.Embedding(n_slots + 1, slot_embedding_dim)
        self.encoder = nn.LSTM(
            embedding_dim, hidden_size, num_layers=1,
            bidirectional=True, batch_first=True,
        )
        self.intent_attention = AdditiveAttention(enc_dim, enc_dim, attn_dim)
        self.intent_head = nn.Linear(2 * enc_dim, n_intents)
        self.slot_attention = AdditiveAttention(slot_embedding_dim, enc_dim, attn_dim)
        self.decoder_cell = nn.LSTMCell(
            enc_dim + enc_dim + slot_embedding_dim, hidden_size
        )
        self.slot_head = nn.Linear(hidden_size, n_slots)
        self.embedding_dropout = nn.Dropout(dropout_embedding)
        self.classifier_dropout = nn.Dropout(dropout_classifier)

    # -- embedding ---------------------------------------------------------

    def load_word_vectors(self, vectors) -> None:
        with torch.no_grad():
            weight = torch.as_tensor(vectors, dtype=self.word_embedding.weight.dtype)
            if weight.shape != self.word_embedding.weight.shape:
                raise ValueError(
                    f"vector matrix {tuple(weight.shape)} does not match embedding "
                    f"{tuple(self.word_embedding.weight.shape)}"
                )
            self.word_embedding.weight.copy_(weight)

    def _embedding_weight(self) -> torch.Tensor:
        """Embedding table, re-standardized per dimension when configured.

        Standardization is computed over non-PAD rows so the perturbation
        budget keeps a consistent scale as the embeddings train.
        """
        weight = self.word_embedding.weight
        if not self.normalize_embeddings:
            return weight
        keep = torch.ones(self.n_words, dtype=torch.bool, device=weight.device)
        keep[self.pad_id] = False
        rows = weight[keep]
        mean = rows.mean(dim=0)
        std = rows.std(dim=0, unbiased=False).clamp_min(1e-12)
        return (weight - mean) / std

    def embed(self, word_ids: torch.Tensor, lengths: torch.Tensor):
        """Look up embeddings; masked (padded) positions map to zero vectors."""
        if word_ids.numel() and (int(word_ids.max()) >= self.n_words or int(word_ids.min()) < 0):
            raise ValueError(
                f"token id out of range [0, {self.n_words}): "
                f"[{int(word_ids.min())}, {int(word_ids.max())}]"
            )
        mask = torch.arange(word_ids.size(1), device=word_ids.device).unsqueeze(0) \
            < lengths.unsqueeze(1)
        emb = F.embedding(word_ids, self._embedding_weight())
        emb = emb * mask.unsqueeze(-1).to(emb.dtype)
        return emb, mask

    # -- forward -----------------------------------------------------------

    def forward(
        self,
        word_ids: torch.Tensor,
        lengths: torch.Tensor,
        perturbation: torch.Tensor | None = None,
        conditioning: str = "greedy",
        slot_tags: torch.Tensor | None = None,
    ) -> Posteriors:
        emb, mask = self.embed(word_ids, lengths)
        return self.forward_embedded(
            emb, mask, lengths,
            perturbation=perturbation,
            conditioning=conditioning,
            slot_tags=slot_tags,
        )

    def forward_embedded(
        self,
        emb: torch.Tensor,
        mask: torch.Tensor,
        lengths: torch.Tensor,
        perturbation: torch.Tensor | None = None,
        conditioning: str = "greedy",
        slot_tags: torch.Tensor | None = None,
    ) -> Posteriors:
        if conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {conditioning!r}")
        if conditioning in ("teacher", "fixed") and slot_tags is None:
            raise ValueError(f"{conditioning} conditioning requires slot_tags")
        if slot_tags is not None and slot_tags.shape != mask.shape:
            raise ValueError(
                f"slot_tags shape {tuple(slot_tags.shape)} not aligned to batch "
                f"{tuple(mask.shape)}"
            )

        emb = self.embedding_dropout(emb)
        if perturbation is not None:
            if perturbation.shape != emb.shape:
                raise ValueError(
                    f"perturbation shape {tuple(perturbation.shape)} does not match "
                    f"embedded batch {tuple(emb.shape)}"
                )
            emb = emb + perturbation

        packed = pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        packed_out, (h_n, _) = self.encoder(packed)
        enc, _ = pad_packed_sequence(
            packed_out, batch_first=True, total_length=mask.size(1)
        )
        # forward state at the last real token, backward state at the first
        h_last = torch.cat([h_n[0], h_n[1]], dim=-1)

        intent_ctx, _ = self.intent_attention(h_last, enc, mask)
        intent_logits = self.intent_head(
            self.classifier_dropout(torch.cat([h_last, intent_ctx], dim=-1))
        )

        b, t_max = mask.shape
        dtype = enc.dtype
        h_dec = enc.new_zeros(b, self.decoder_cell.hidden_size)
        c_dec = enc.new_zeros(b, self.decoder_cell.hidden_size)
        prev = self.slot_embedding(
            torch.full((b,), self.bos_slot_id, dtype=torch.long, device=enc.device)
        ).to(dtype)

        step_logits = []
        step_tags = []
        for t in range(t_max):
            ctx, _ = self.slot_attention(prev, enc, mask)
            cell_in = torch.cat([enc[:, t], ctx, prev], dim=-1)
            h_dec, c_dec = self.decoder_cell(cell_in, (h_dec, c_dec))
            logits_t = self.slot_head(self.classifier_dropout(h_dec))
            step_logits.append(logits_t)
            step_tags.append(first_argmax(logits_t, dim=-1))
            if t + 1 < t_max:
                if conditioning == "greedy":
                    next_cond = step_tags[-1]
                else:
                    next_cond = slot_tags[:, t].clamp(min=0)
                prev = self.slot_embedding(next_cond).to(dtype)

        slot_logits = torch.stack(step_logits, dim=1)
        return Posteriors(
            log_p_int=F.log_softmax(intent_logits, dim=-1),
            log_p_slot=F.log_softmax(slot_logits, dim=-1),
            mask=mask,
            predicted_tags=torch.stack(step_tags, dim=1),
        )

    # -- lifecycle ---------------------------------------------------------

    def snapshot(self) -> "JointNluModel":
        """Frozen deep copy: numerically equal now, unaffected by later updates."""
        clone = copy.deepcopy(self)
        clone.eval()
        for p in clone.parameters():
            p.requires_grad_(False)
        return clone

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def predict(model: JointNluModel, batch: TokenBatch):
    """Greedy inference: argmax intent ids and per-example slot id sequences.

    Intent ties break toward the lowest index; padded positions are dropped.
    """
    with eval_mode(model), torch.no_grad():
        out = model(batch.word_ids, batch.lengths, conditioning="greedy")
    intents = first_argmax(out.log_p_int, dim=-1)
    slot_seqs = [
        out.predicted_tags[i, : int(batch.lengths[i])].tolist()
        for i in range(len(batch))
    ]
    return intents.tolist(), slot_seqs


def build_model(vocab: Vocabulary, config, embedding_matrix=None) -> JointNluModel:
    """Construct a model per RunConfig, optionally seeding word vectors."""
    model = JointNluModel(
        n_words=vocab.n_words,
        n_intents=vocab.n_intents,
        n_slots=vocab.n_slots,
        embedding_dim=config.embedding_dim,
        hidden_size=config.hidden_size,
        slot_embedding_dim=config.slot_embedding_dim,
        attention_dim=config.attention_dim,
        dropout_embedding=config.resolved_dropout_embedding(),
        dropout_classifier=config.dropout_classifier,
        normalize_embeddings=config.vat.normalize_embeddings if config.uses_vat() else False,
        pad_id=vocab.pad_id,
    )
    if embedding_matrix is not None:
        model.load_word_vectors(embedding_matrix.vectors)
    return model


def save_checkpoint(
    path: str | Path,
    model: JointNluModel,
    run_config: dict | None = None,
    vocab_hash: str | None = None,
) -> None:
    """Write a self-describing checkpoint with a versioned header."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "hparams": model.hparams,
        "state_dict": model.state_dict(),
        "run_config": run_config or {},
        "vocab_hash": vocab_hash,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[JointNluModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    model = JointNluModel(**payload["hparams"])
    state = payload["state_dict"]
    dtype = next(t.dtype for t in state.values() if t.is_floating_point())
    model.to(dtype)
    model.load_state_dict(state)
    return model, payload
