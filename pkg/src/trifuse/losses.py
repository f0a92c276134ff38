"""Multi-task objective: focal loss with label smoothing per head, combined
under learnable log-variance weighting."""

from __future__ import annotations

import numpy as np

from . import ops
from .config import LossConfig
from .tape import Node, Tape

HEAD_TO_OUTPUT = {
    "face": "p_face", "gesture": "p_gesture", "voice": "p_voice",
    "fusion": "p_fusion", "ensemble": "p_ensemble", "final": "p_final",
}


def smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    """(1 - eps) * onehot + eps / K, row per label."""
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels[None]
    if np.any((labels < 0) | (labels >= num_classes)):
        bad = labels[(labels < 0) | (labels >= num_classes)]
        raise ValueError(f"label(s) {bad.tolist()} outside [0, {num_classes})")
    t = np.full((len(labels), num_classes), smoothing / num_classes)
    t[np.arange(len(labels)), labels] += 1.0 - smoothing
    return t


def focal_from_targets(tape: Tape | None, logits: Node, targets: np.ndarray,
                       gamma: float) -> Node:
    """Mean over the batch of -sum_k t_k (1-q_k)^gamma log q_k."""
    log_q = ops.log_softmax(tape, logits)
    q = ops.exp(tape, log_q)
    weight = ops.pow_const(tape, ops.rsub_scalar(tape, 1.0, q), gamma)
    terms = ops.mul_const(tape, ops.mul(tape, weight, log_q), targets)
    return ops.neg(tape, ops.mean_all(tape, ops.sum_last(tape, terms)))


def focal_loss(tape: Tape | None, logits: Node, label: int, gamma: float = 2.0,
               smoothing: float = 0.0) -> Node:
    """Focal loss for a single logit vector and integer label."""
    k = logits.value.shape[-1]
    if logits.value.ndim == 1:
        logits = ops.reshape(tape, logits, (1, k))
    targets = smoothed_targets(np.asarray([label]), k, smoothing)
    return focal_from_targets(tape, logits, targets, gamma)


def uncertainty_weighted_total(tape: Tape | None, losses: list[Node],
                               log_var: Node) -> Node:
    """sum_i [ 0.5 * exp(-s_i) * L_i + 0.5 * s_i ] with s_i = log sigma_i^2."""
    if log_var.value.shape != (len(losses),):
        raise ValueError(
            f"{len(losses)} head losses but log_var has shape {log_var.value.shape}"
        )
    stacked = ops.stack_scalars(tape, losses)
    weighted = ops.mul(tape, ops.exp(tape, ops.neg(tape, log_var)), stacked)
    per_head = ops.add(tape, weighted, log_var)
    return ops.scale(tape, ops.sum_all(tape, per_head), 0.5)


def multitask_loss(tape: Tape | None, outputs: dict[str, Node], log_var: Node,
                   cfg: LossConfig, targets: np.ndarray,
                   targets_b: np.ndarray | None = None,
                   lam: float = 1.0) -> tuple[Node, dict[str, float]]:
    """Focal loss on every configured head, combined by Eq-style variance
    weighting. With a mixup pair, each head loss is lam * L(t_a) + (1-lam) * L(t_b).
    """
    head_losses: list[Node] = []
    per_head: dict[str, float] = {}
    for head in cfg.loss_heads:
        logits = outputs[HEAD_TO_OUTPUT[head]]
        loss = focal_from_targets(tape, logits, targets, cfg.focal_gamma)
        if targets_b is not None:
            loss_b = focal_from_targets(tape, logits, targets_b, cfg.focal_gamma)
            loss = ops.add(tape, ops.scale(tape, loss, lam),
                           ops.scale(tape, loss_b, 1.0 - lam))
        head_losses.append(loss)
        per_head[head] = float(loss.value)
    total = uncertainty_weighted_total(tape, head_losses, log_var)
    return total, per_head
