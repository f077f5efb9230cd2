"""Supervised cross-entropy losses over the labeled members of a batch."""

from __future__ import annotations

import torch

from .model import Posteriors


def ce_intent_loss(posteriors: Posteriors, intent_ids: torch.Tensor) -> torch.Tensor:
    """Mean intent NLL over labeled rows (intent id >= 0); 0 when none."""
    labeled = intent_ids >= 0
    if not bool(labeled.any()):
        return posteriors.log_p_int.sum() * 0.0
    rows = posteriors.log_p_int[labeled]
    gold = intent_ids[labeled]
    return -rows.gather(1, gold.unsqueeze(1)).mean()


def ce_slot_loss(posteriors: Posteriors, slot_ids: torch.Tensor) -> torch.Tensor:
    """Per-utterance mean token NLL, averaged over labeled utterances.

    Averaging inside each utterance first keeps utterances equally weighted
    under variable lengths; padded positions (slot id < 0) are excluded.
    """
    labeled = (slot_ids >= 0).any(dim=1)
    if not bool(labeled.any()):
        return posteriors.log_p_slot.sum() * 0.0
    log_p = posteriors.log_p_slot[labeled]
    gold = slot_ids[labeled]
    tok_mask = (gold >= 0) & posteriors.mask[labeled]
    nll = -log_p.gather(2, gold.clamp(min=0).unsqueeze(2)).squeeze(2)
    nll = nll * tok_mask.to(nll.dtype)
    per_utt = nll.sum(dim=1) / tok_mask.sum(dim=1).clamp(min=1)
    return per_utt.mean()
