"""Identity loss, batch-hard triplet loss and the two-stage combination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, mul, record_op


@dataclass
class LossConfig:
    alpha: float = 0.3
    lambda1: float = 0.1
    lambda2: float = 0.9
    switch_epoch: int = 10

    def __post_init__(self):
        if self.alpha < 0 or self.lambda1 < 0 or self.lambda2 < 0 or self.switch_epoch < 0:
            raise ValueError(f"loss settings must be nonnegative: {self}")


def id_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.intp)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"id_loss: expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"id_loss: labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(logsum - z[rows, labels])
    probs = np.exp(z - logsum[:, None])

    def back(g, needs):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (float(g) / n),)

    return record_op("id_loss", np.asarray(loss), (logits,), back)


def pairwise_distances(e: Tensor) -> Tensor:
    """Euclidean distance matrix via the clamped squared expansion; exact zero diagonal."""
    x = e.data
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"pairwise_distances needs [N>=2, D], got {x.shape}")
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    d = np.sqrt(d2)
    d = 0.5 * (d + d.T)

    def back(g, needs):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(d > 0, g / d, 0.0)
        w = w + w.T
        return (w.sum(axis=1)[:, None] * x - w @ x,)

    return record_op("pairwise_distances", d, (e,), back)


def _check_mining(labels: np.ndarray):
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValueError("triplet mining needs at least two identities in the batch")
    lonely = uniq[counts < 2]
    if len(lonely):
        raise ValueError(f"triplet mining needs >= 2 instances per identity; singletons: {lonely.tolist()}")


def hard_mining(dist: Tensor, labels, alpha: float) -> Tensor:
    """Hinge on hardest positive / hardest negative per anchor.

    The hinge is averaged over the anchors whose margin is violated (0 when none is),
    so satisfied anchors do not dilute the loss of the hard ones.
    """
    labels = np.asarray(labels)
    _check_mining(labels)
    d = dist.data
    n = d.shape[0]
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    pos = np.where(pos_mask, d, -np.inf).argmax(axis=1)
    neg = np.where(same, np.inf, d).argmin(axis=1)
    rows = np.arange(n)
    margins = alpha + (d[rows, pos] - d[rows, neg])
    active = margins > 0
    n_active = int(active.sum())
    loss = margins[active].sum() / n_active if n_active else 0.0

    def back(g, needs):
        gd = np.zeros_like(d)
        if not n_active:
            return (gd,)
        scale = float(g) / n_active
        np.add.at(gd, (rows[active], pos[active]), scale)
        np.add.at(gd, (rows[active], neg[active]), -scale)
        return (gd,)

    return record_op("hard_mining", np.asarray(loss), (dist,), back)


def triplet_batch_hard(e: Tensor, labels, alpha: float = 0.3) -> Tensor:
    return hard_mining(pairwise_distances(e), labels, alpha)


def combined_loss(epoch: int, cfg: LossConfig, l_id: Tensor, l_tri: Tensor | None, two_stage: bool = True) -> Tensor:
    """Identity loss alone before the switch epoch, weighted sum from it onwards.

    With ``two_stage=False`` the weighted sum is used from epoch 0.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    if two_stage and epoch < cfg.switch_epoch:
        return l_id
    if l_tri is None:
        raise ValueError(f"epoch {epoch} needs the triplet loss")
    return add(mul(Tensor(cfg.lambda1), l_id), mul(Tensor(cfg.lambda2), l_tri))
