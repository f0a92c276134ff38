"""Training loop: AdamW with decoupled weight decay, cosine schedule with
linear warmup, curriculum-ramped augmentation, and JSONL metrics."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .augment import Augmenter
from .config import MODALITIES, Config
from .data import ALL_MASKS, Dataset, SplitManifest
from .decision import AblationFlags
from .losses import multitask_loss, smoothed_targets
from .model import TrimodalNet
from .params import ParamStore, save_checkpoint
from .tape import Tape


class AdamW:
    """Decoupled-weight-decay Adam over a ParamStore.

    Decay applies only to weight matrices (ndim >= 2); biases and the
    log-variance vector are exempt.
    """

    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(node.value) for name, node in store.items()}
        self.v = {name: np.zeros_like(node.value) for name, node in store.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, node in self.store.items():
            g = node.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and node.value.ndim >= 2:
                node.value *= 1.0 - lr * self.weight_decay
            node.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at(step: int, peak: float, warmup_steps: int, total_steps: int,
          floor: float = 0.0) -> float:
    """Linear 0 -> peak over warmup, then cosine peak -> floor."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    if step >= total_steps:
        return floor
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


def curriculum_intensity(epoch: int, mode: str, ramp_epochs: int) -> float:
    """Augmentation strength in [0, 1]; 'clean-to-hard' ramps linearly from
    zero to full by epoch ramp_epochs, 'uniform' is always full."""
    if mode == "uniform":
        return 1.0
    return min(1.0, epoch / max(1, ramp_epochs))


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _feature_scale(arrays: dict[str, np.ndarray]) -> dict[str, float]:
    return {m: float(arrays[m].std()) or 1.0 for m in MODALITIES}


def evaluate_masks(model: TrimodalNet, arrays: dict[str, np.ndarray],
                   labels: np.ndarray, ablation: AblationFlags | None = None,
                   batch: int = 512) -> dict[str, dict[str, float]]:
    """Top-1/Top-5 on every availability mask (validation-time summary)."""
    out: dict[str, dict[str, float]] = {}
    n = len(labels)
    for mask in ALL_MASKS:
        hits1 = hits5 = 0
        for start in range(0, n, batch):
            sl = slice(start, min(start + batch, n))
            _, ranks = model.predict(arrays["face"][sl], arrays["gesture"][sl],
                                     arrays["voice"][sl], mask=mask, ablation=ablation)
            y = labels[sl][:, None]
            hits1 += int((ranks[:, :1] == y).any(axis=1).sum())
            hits5 += int((ranks[:, :5] == y).any(axis=1).sum())
        out[mask.name] = {"top1": hits1 / n, "top5": hits5 / n}
    return out


@dataclass
class TrainResult:
    checkpoint_path: str | None
    metrics: list[dict]
    best_val_top1: float
    best_epoch: int


def train(model: TrimodalNet, dataset: Dataset, manifest: SplitManifest,
          cfg: Config, out_dir: str | None = None,
          ablation: AblationFlags | None = None, quiet: bool = False) -> TrainResult:
    """Run the full loop and return metrics; saves the checkpoint that had
    the best validation trimodal Top-1 when out_dir is given."""
    ab = ablation or AblationFlags()
    train_set = dataset.subset(manifest.indices("train"))
    val_set = dataset.subset(manifest.indices("val"))
    train_arrays = {m: train_set.modality(m) for m in MODALITIES}
    val_arrays = {m: val_set.modality(m) for m in MODALITIES}
    train_labels = train_set.identity
    val_labels = val_set.identity

    tcfg = cfg.train
    steps_per_epoch = math.ceil(len(train_labels) / tcfg.batch_size)
    total_steps = steps_per_epoch * tcfg.epochs
    warmup_steps = int(round(total_steps * tcfg.warmup_fraction))

    optimizer = AdamW(model.store, tcfg.beta1, tcfg.beta2, tcfg.adam_eps,
                      tcfg.weight_decay)
    augmenter = Augmenter(cfg.augment, _feature_scale(train_arrays))
    augment_on = cfg.augment.enabled and not ab.no_augmentation

    seq = np.random.SeedSequence(cfg.seed)
    order_rng, augment_rng, dropout_rng = (np.random.default_rng(s)
                                           for s in seq.spawn(3))

    metrics: list[dict] = []
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")
    best_score, best_top1, best_epoch = -1.0, -1.0, -1
    best_state: dict[str, np.ndarray] | None = None
    step = 0
    lr = 0.0
    try:
        for epoch in range(tcfg.epochs):
            intensity = (curriculum_intensity(epoch, tcfg.curriculum,
                                              tcfg.curriculum_ramp_epochs)
                         if augment_on else 0.0)
            loss_sums: dict[str, float] = {}
            total_sum = 0.0
            n_batches = 0
            for idx in iterate_batches(len(train_labels), tcfg.batch_size, order_rng):
                batch = {m: train_arrays[m][idx] for m in MODALITIES}
                labels = train_labels[idx]
                labels_b, lam = None, 1.0
                if augment_on:
                    batch, labels, labels_b, lam = augmenter.apply(
                        batch, labels, intensity, augment_rng)
                tape = Tape()
                outputs = model.forward(tape, batch["face"], batch["gesture"],
                                        batch["voice"], ablation=ab, train_mode=True,
                                        rng=dropout_rng)
                k = model.cfg.num_classes
                targets = smoothed_targets(labels, k, cfg.loss.label_smoothing)
                targets_b = (smoothed_targets(labels_b, k, cfg.loss.label_smoothing)
                             if labels_b is not None else None)
                total, per_head = multitask_loss(tape, outputs, model.log_var,
                                                 cfg.loss, targets, targets_b, lam)
                model.store.zero_grad()
                tape.backward(total)
                if tcfg.clip_norm is not None:
                    norm = model.store.grad_norm()
                    if norm > tcfg.clip_norm:
                        model.store.scale_grads(tcfg.clip_norm / norm)
                lr = lr_at(step, tcfg.peak_lr, warmup_steps, total_steps, tcfg.floor_lr)
                optimizer.step(lr)
                step += 1
                for head, value in per_head.items():
                    loss_sums[head] = loss_sums.get(head, 0.0) + value
                total_sum += float(total.value)
                n_batches += 1

            val = evaluate_masks(model, val_arrays, val_labels, ablation=ab,
                                 batch=tcfg.eval_batch)
            # checkpoint selection scores robustness across every mask, not
            # just the trimodal column, which saturates immediately; the most
            # recent epoch wins ties so augmentation-hardened weights survive
            score = sum(v["top1"] for v in val.values()) / len(val)
            record = {
                "epoch": epoch,
                "lr": lr,
                "intensity": intensity,
                "losses": {h: s / n_batches for h, s in loss_sums.items()},
                "total_loss": total_sum / n_batches,
                "val": val,
                "val_mask_mean_top1": score,
            }
            metrics.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_fh.flush()
            if not quiet:
                print(f"epoch {epoch:3d}  loss {record['total_loss']:.4f}  "
                      f"val trimodal top1 {val['trimodal']['top1']:.4f}  "
                      f"mask mean {score:.4f}")
            if score >= best_score:
                best_score = score
                best_top1 = val["trimodal"]["top1"]
                best_epoch = epoch
                best_state = model.store.state_dict()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if best_state is not None:
        model.store.load_state_dict(best_state)
    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = os.path.join(out_dir, "checkpoint.npz")
        save_checkpoint(model.store, checkpoint_path, config_json=cfg.to_json())
    return TrainResult(checkpoint_path=checkpoint_path, metrics=metrics,
                       best_val_top1=best_top1, best_epoch=best_epoch)
