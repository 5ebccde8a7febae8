"""Segmentation losses: cross-entropy, soft Dice, cross-modal consistency.

The supervised loss per branch is ``beta * CE + gamma_dice * Dice`` and
the two branches are summed; the final objective adds the mean-squared
difference between the branches' soft predictions on unlabeled inputs,
weighted by ``lambda_cons``.
"""

from dataclasses import asdict, dataclass, field

import torch

from .errors import EmptyLabeledBatch, NonFiniteLoss, ShapeMismatch

PROB_CLAMP = 1e-7
DICE_SMOOTH = 1e-5


@dataclass
class LossWeights:
    beta: float = 1.0  # cross-entropy weight
    gamma_dice: float = 1.0  # dice weight
    lambda_cons: float = 0.01  # consistency weight

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LossReport:
    l_ce_a: float
    l_ce_b: float
    l_dice_a: float
    l_dice_b: float
    l_sup_total: float
    l_cons: float
    l_final: float

    def to_dict(self):
        return asdict(self)


def _check_pair(probs, mask):
    if probs.ndim != 4 or probs.shape[1] != 2:
        raise ShapeMismatch(f"probs must be (B, 2, H, W), got {tuple(probs.shape)}")
    if mask.shape != (probs.shape[0], probs.shape[2], probs.shape[3]):
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not match probs {tuple(probs.shape)}")


def cross_entropy(probs, mask):
    """Mean over all pixels of -log p(true class), probabilities clamped before log."""
    _check_pair(probs, mask)
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_true = p.gather(1, mask.long().unsqueeze(1)).squeeze(1)
    return -p_true.log().mean()


def dice_loss(probs, mask):
    """Soft Dice on the foreground channel, summed over batch and pixels."""
    _check_pair(probs, mask)
    p_fg = probs[:, 1]
    y = mask.to(probs.dtype)
    inter = (p_fg * y).sum()
    denom = p_fg.sum() + y.sum()
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)


def supervised_parts(pred, mask, weights: LossWeights):
    """Per-branch CE/Dice terms and their weighted combination, as tensors."""
    if mask.shape[0] == 0:
        raise EmptyLabeledBatch("supervised loss needs a non-empty labeled batch")
    ce_a = cross_entropy(pred.probs_a, mask)
    ce_b = cross_entropy(pred.probs_b, mask)
    dice_a = dice_loss(pred.probs_a, mask)
    dice_b = dice_loss(pred.probs_b, mask)
    sup_a = weights.beta * ce_a + weights.gamma_dice * dice_a
    sup_b = weights.beta * ce_b + weights.gamma_dice * dice_b
    return {
        "ce_a": ce_a,
        "ce_b": ce_b,
        "dice_a": dice_a,
        "dice_b": dice_b,
        "sup_a": sup_a,
        "sup_b": sup_b,
        "sup_total": sup_a + sup_b,
    }


def supervised_loss(pred, mask, weights: LossWeights):
    """(l_sup_a, l_sup_b, l_sup_total) with losses from both branches summed."""
    parts = supervised_parts(pred, mask, weights)
    return parts["sup_a"], parts["sup_b"], parts["sup_total"]


def consistency_loss(probs_a_u, probs_b_u):
    """Mean squared difference of the two branches' soft predictions on unlabeled data."""
    if probs_a_u.shape != probs_b_u.shape:
        raise ShapeMismatch(
            f"consistency inputs differ: {tuple(probs_a_u.shape)} vs {tuple(probs_b_u.shape)}"
        )
    if probs_a_u.numel() == 0:
        return torch.zeros((), dtype=probs_a_u.dtype)
    return ((probs_a_u - probs_b_u) ** 2).mean()


def final_loss(sup_total, cons, weights: LossWeights):
    """Total objective: supervised term plus weighted consistency term."""
    total = sup_total + weights.lambda_cons * cons
    value = total.item() if torch.is_tensor(total) else total
    if not torch.isfinite(torch.as_tensor(value)):
        raise NonFiniteLoss(f"final loss is {value} (sup={sup_total}, cons={cons})")
    return total
