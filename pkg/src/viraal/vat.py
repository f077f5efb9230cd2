"""Virtual adversarial training adapted to joint intent + slot training.

One perturbation with an L2 budget is computed on the embedded inputs from
the gradient of a smoothness divergence: the intent divergence, the slot
divergence, or their average for joint training.  Training then minimizes
the divergence(s) re-evaluated at the perturbed input; no gradient flows
back through the perturbation itself or through the frozen reference
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch

from .model import JointNluModel, Posteriors, TokenBatch, eval_mode

LOG_FLOOR = 1e-12

HEADS = ("int", "slot")
JOINT_NORM_MODES = ("raw-grad", "normalize-then-average")


class VatNumericsError(RuntimeError):
    """The adversarial loss came out non-finite."""


@dataclass
class VatConfig:
    epsilon: float = 5.0
    xi: float = 1e-2
    normalize_embeddings: bool = True
    # ascent (+g) climbs the divergence, matching its worst-case definition;
    # False flips to the minus-sign convention some implementations use
    ascent: bool = True
    joint_norm_mode: str = "raw-grad"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.xi <= 0:
            raise ValueError(f"xi must be > 0, got {self.xi}")
        if self.joint_norm_mode not in JOINT_NORM_MODES:
            raise ValueError(f"joint_norm_mode must be one of {JOINT_NORM_MODES}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "xi": self.xi,
            "normalize_embeddings": self.normalize_embeddings,
            "ascent": self.ascent,
            "joint_norm_mode": self.joint_norm_mode,
        }


@dataclass
class Perturbation:
    r: torch.Tensor
    epsilon: float
    kind: str  # "int" | "slot" | "joint"


def kl_divergence(p: torch.Tensor, q: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """sum p * log(p/q) with q floored at 1e-12 and 0*log(0/.) = 0."""
    p = torch.as_tensor(p)
    q = torch.as_tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    log_p = torch.log(p.clamp_min(LOG_FLOOR))
    log_q = torch.log(q.clamp_min(LOG_FLOOR))
    return (p * (log_p - log_q)).sum(dim=dim)


def _kl_from_log(
    p_ref: torch.Tensor, log_p_ref: torch.Tensor, log_q: torch.Tensor
) -> torch.Tensor:
    """KL(p_ref || q) in log space.

    Both log tensors come straight from log-softmax so the result is exactly
    zero when the two passes produced bitwise-identical distributions; the
    zero-probability guard keeps 0 * log(0/.) = 0.
    """
    terms = torch.where(
        p_ref > 0, p_ref * (log_p_ref - log_q), torch.zeros_like(p_ref)
    )
    return terms.sum(dim=-1)


def clean_reference(model_hat: JointNluModel, batch: TokenBatch) -> Posteriors:
    """Greedy, dropout-free pass under the frozen parameters.

    Its per-step distributions are already conditioned on its own greedy
    tags, so they double as the fixed-conditioning reference.
    """
    with eval_mode(model_hat), torch.no_grad():
        return model_hat(batch.word_ids, batch.lengths, conditioning="greedy")


def _perturbed_pass(
    model: JointNluModel,
    batch: TokenBatch,
    r: torch.Tensor | None,
    tags: torch.Tensor,
) -> Posteriors:
    """Dropout-free forward at x + r with conditioning frozen to `tags`."""
    with eval_mode(model):
        emb, mask = model.embed(batch.word_ids, batch.lengths)
        return model.forward_embedded(
            emb, mask, batch.lengths,
            perturbation=r, conditioning="fixed", slot_tags=tags,
        )


def _intent_divergence(ref: Posteriors, out: Posteriors) -> torch.Tensor:
    return _kl_from_log(
        ref.p_int.detach(), ref.log_p_int.detach(), out.log_p_int
    ).mean()


def _slot_divergence(ref: Posteriors, out: Posteriors) -> torch.Tensor:
    per_token = _kl_from_log(
        ref.p_slot.detach(), ref.log_p_slot.detach(), out.log_p_slot
    )  # [B, T]
    mask = ref.mask
    n_tokens = mask.sum()
    return (per_token * mask.to(per_token.dtype)).sum() / n_tokens


def d_int(
    batch: TokenBatch,
    r: torch.Tensor | None,
    model_hat: JointNluModel,
    model: JointNluModel,
    reference: Posteriors | None = None,
) -> torch.Tensor:
    """Mean over the batch of intent KLs between the clean pass under the
    frozen parameters and the perturbed pass under the live ones."""
    ref = reference if reference is not None else clean_reference(model_hat, batch)
    out = _perturbed_pass(model, batch, r, ref.predicted_tags)
    return _intent_divergence(ref, out)


def d_slot(
    batch: TokenBatch,
    r: torch.Tensor | None,
    model_hat: JointNluModel,
    model: JointNluModel,
    reference: Posteriors | None = None,
) -> torch.Tensor:
    """Per-token slot KLs summed over real tokens, divided by the total
    real-token count; both passes share the clean pass's greedy tags."""
    ref = reference if reference is not None else clean_reference(model_hat, batch)
    out = _perturbed_pass(model, batch, r, ref.predicted_tags)
    return _slot_divergence(ref, out)


def _per_example_norm(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(1).norm(dim=1)


def normalize_per_example(x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    """Rescale each example slice to L2 norm `scale`; all-zero slices stay zero."""
    norms = _per_example_norm(x)
    safe = torch.where(norms > 0, norms, torch.ones_like(norms))
    out = x * (scale / safe).view(-1, *([1] * (x.dim() - 1)))
    return torch.where(
        (norms > 0).view(-1, *([1] * (x.dim() - 1))), out, torch.zeros_like(out)
    )


def combine_head_gradients(
    grads: dict[str, torch.Tensor], config: VatConfig
) -> torch.Tensor:
    """Compose per-head divergence gradients into the joint direction.

    raw-grad averages the raw gradients (the gradient of the averaged
    divergence); normalize-then-average budgets each head first.  Either
    way, exactly opposite head gradients cancel to zero.
    """
    if set(grads) != set(HEADS):
        raise ValueError(f"joint composition needs both heads, got {sorted(grads)}")
    if config.joint_norm_mode == "raw-grad":
        return 0.5 * (grads["int"] + grads["slot"])
    r_int = normalize_per_example(grads["int"], config.epsilon)
    r_slot = normalize_per_example(grads["slot"], config.epsilon)
    return 0.5 * (r_int + r_slot)


def finalize_perturbation(
    g: torch.Tensor, mask: torch.Tensor, config: VatConfig, kind: str
) -> Perturbation:
    """Scale a gradient direction to the L2 budget, zero where masked."""
    g = g * mask.unsqueeze(-1).to(g.dtype)
    sign = 1.0 if config.ascent else -1.0
    r = sign * normalize_per_example(g, config.epsilon)
    return Perturbation(r=r.detach(), epsilon=config.epsilon, kind=kind)


def _head_set(heads: Iterable[str]) -> tuple[str, ...]:
    hs = tuple(sorted(set(heads)))
    if not hs or any(h not in HEADS for h in hs):
        raise ValueError(f"heads must be a nonempty subset of {HEADS}, got {hs}")
    return hs


def compute_r_vadv(
    batch: TokenBatch,
    model_hat: JointNluModel,
    config: VatConfig,
    heads: Iterable[str] = HEADS,
    generator: torch.Generator | None = None,
    reference: Posteriors | None = None,
) -> Perturbation:
    """One-step power-iteration estimate of the worst-case perturbation.

    A random unit direction scaled by xi seeds the gradient of the requested
    divergence(s); the gradient is rescaled to the epsilon budget.  The
    result is detached: no training gradient flows through it.
    """
    hs = _head_set(heads)
    if len(batch) == 0:
        raise ValueError("empty batch")
    ref = reference if reference is not None else clean_reference(model_hat, batch)

    with torch.no_grad():
        emb, mask = model_hat.embed(batch.word_ids, batch.lengths)
    d = torch.randn(emb.shape, generator=generator, dtype=emb.dtype, device=emb.device)
    d = d * mask.unsqueeze(-1).to(d.dtype)
    r0 = (config.xi * normalize_per_example(d)).requires_grad_(True)

    with eval_mode(model_hat), torch.enable_grad():
        out = model_hat.forward_embedded(
            emb, mask, batch.lengths,
            perturbation=r0, conditioning="fixed", slot_tags=ref.predicted_tags,
        )
        if len(hs) == 2:
            d_i = _intent_divergence(ref, out)
            d_s = _slot_divergence(ref, out)
            if config.joint_norm_mode == "raw-grad":
                g = torch.autograd.grad(0.5 * (d_i + d_s), r0, allow_unused=True)[0]
            else:
                g_i = torch.autograd.grad(d_i, r0, retain_graph=True, allow_unused=True)[0]
                g_s = torch.autograd.grad(d_s, r0, allow_unused=True)[0]
                zero = torch.zeros_like(r0)
                g = combine_head_gradients(
                    {"int": g_i if g_i is not None else zero,
                     "slot": g_s if g_s is not None else zero},
                    config,
                )
            kind = "joint"
        else:
            div = _intent_divergence(ref, out) if hs[0] == "int" \
                else _slot_divergence(ref, out)
            g = torch.autograd.grad(div, r0, allow_unused=True)[0]
            kind = hs[0]

    if g is None:
        g = torch.zeros_like(r0)
    return finalize_perturbation(g.detach(), mask, config, kind)


def vat_loss(
    batch: TokenBatch,
    model_hat: JointNluModel,
    model: JointNluModel,
    config: VatConfig,
    heads: Iterable[str] = HEADS,
    generator: torch.Generator | None = None,
    perturbation: Perturbation | None = None,
) -> torch.Tensor:
    """Divergence(s) at x + r_vadv, with gradient flowing into the live model.

    Joint heads average the two divergences; single heads use theirs alone.
    """
    hs = _head_set(heads)
    ref = clean_reference(model_hat, batch)
    if perturbation is None:
        perturbation = compute_r_vadv(
            batch, model_hat, config, heads=hs, generator=generator, reference=ref
        )
    out = _perturbed_pass(model, batch, perturbation.r, ref.predicted_tags)

    if len(hs) == 2:
        loss = 0.5 * (_intent_divergence(ref, out) + _slot_divergence(ref, out))
    elif hs[0] == "int":
        loss = _intent_divergence(ref, out)
    else:
        loss = _slot_divergence(ref, out)

    if not torch.isfinite(loss):
        raise VatNumericsError(
            f"non-finite adversarial loss {loss.item()} "
            f"(batch={len(batch)}, heads={hs}, epsilon={config.epsilon})"
        )
    return loss


def heads_for_loss(loss_name: str) -> tuple[str, ...]:
    """Map a configured loss name (vat-int / vat-slot / vat-joint) to heads."""
    mapping = {
        "vat-int": ("int",),
        "vat-slot": ("slot",),
        "vat-joint": ("int", "slot"),
    }
    if loss_name not in mapping:
        raise ValueError(f"not an adversarial loss: {loss_name!r}")
    return mapping[loss_name]
