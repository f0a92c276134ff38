"""Training-time multimodal augmentation: Gaussian noise, feature dropout,
modality masking, and mixup. All of it operates on raw embedding arrays
before they enter the network; evaluation never touches this module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import MODALITIES, AugmentConfig
from .data import ModalityMask


def gaussian_noise(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std == 0.0:
        return x.copy()
    return x + rng.normal(scale=std, size=x.shape)


def feature_dropout(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Zero each element with probability rate, scale survivors by 1/(1-rate)."""
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be < 1, got {rate}")
    if rate == 0.0:
        return x.copy()
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate)


def _mask_choice(prob: float, rng: np.random.Generator) -> tuple[list[str], bool] | None:
    """Draw one masking decision: None, or (modalities to hit, partial?)."""
    if rng.random() >= prob:
        return None
    # any nonempty proper subset, so at least one modality stays fully intact
    subsets = [["face"], ["gesture"], ["voice"],
               ["face", "gesture"], ["face", "voice"], ["gesture", "voice"]]
    chosen = subsets[int(rng.integers(len(subsets)))]
    partial = bool(rng.random() < 0.5)
    return chosen, partial


def _apply_mask(arrays: dict[str, np.ndarray], rows: slice | np.ndarray,
                chosen: list[str], partial: bool,
                rng: np.random.Generator) -> ModalityMask:
    absent = set()
    for m in chosen:
        arr = arrays[m]
        if partial:
            frac = rng.random()
            hit = rng.random(arr.shape[-1]) < frac
            if arr.ndim == 1:
                arr[hit] = 0.0
            else:
                arr[rows, hit] = 0.0
        else:
            arr[rows] = 0.0
            absent.add(m)
    return ModalityMask(**{m: m not in absent for m in MODALITIES})


def modality_mask(sample: dict[str, np.ndarray], prob: float,
                  rng: np.random.Generator) -> tuple[dict[str, np.ndarray], ModalityMask]:
    """Mask one sample: with probability prob, zero a random nonempty proper
    subset of modalities entirely (complete loss) or a random fraction of
    their dimensions (partial loss), 50/50."""
    out = {m: np.array(sample[m], dtype=np.float64, copy=True) for m in MODALITIES}
    decision = _mask_choice(prob, rng)
    if decision is None:
        return out, ModalityMask()
    chosen, partial = decision
    mask = _apply_mask(out, slice(None), chosen, partial, rng)
    return out, mask


def mask_batch(arrays: dict[str, np.ndarray], prob: float, rng: np.random.Generator,
               granularity: str = "batch") -> tuple[dict[str, np.ndarray], list[ModalityMask]]:
    """Batch masking. 'batch' draws one decision applied to every sample;
    'sample' draws independently per sample."""
    out = {m: np.array(arrays[m], dtype=np.float64, copy=True) for m in MODALITIES}
    n = len(out["face"])
    if granularity == "batch":
        decision = _mask_choice(prob, rng)
        if decision is None:
            return out, [ModalityMask()] * n
        chosen, partial = decision
        mask = _apply_mask(out, slice(None), chosen, partial, rng)
        return out, [mask] * n
    masks = []
    for i in range(n):
        decision = _mask_choice(prob, rng)
        if decision is None:
            masks.append(ModalityMask())
            continue
        chosen, partial = decision
        masks.append(_apply_mask(out, np.asarray([i]), chosen, partial, rng))
    return out, masks


def mixup_pair(sample_a: dict[str, np.ndarray], sample_b: dict[str, np.ndarray],
               alpha: float, rng: np.random.Generator
               ) -> tuple[dict[str, np.ndarray], float]:
    """Mix two samples' embeddings with lambda ~ Beta(alpha, alpha); the loss
    is then lam * L(y_a) + (1 - lam) * L(y_b)."""
    lam = float(rng.beta(alpha, alpha))
    mixed = {m: lam * sample_a[m] + (1.0 - lam) * sample_b[m] for m in MODALITIES}
    return mixed, lam


def mixup_batch(arrays: dict[str, np.ndarray], labels: np.ndarray, alpha: float,
                rng: np.random.Generator
                ) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray, float]:
    """Mix the batch with a shuffled copy of itself under a single lambda."""
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(labels))
    mixed = {m: lam * arrays[m] + (1.0 - lam) * arrays[m][perm] for m in MODALITIES}
    return mixed, labels, labels[perm], lam


@dataclass
class Augmenter:
    """Applies the configured augmentations at a given intensity in [0, 1].

    Order inside a batch: mixup, then Gaussian noise, then feature dropout,
    then modality masking last so masked modalities stay exactly zero.
    """
    cfg: AugmentConfig
    feature_scale: dict[str, float]

    def apply(self, arrays: dict[str, np.ndarray], labels: np.ndarray,
              intensity: float, rng: np.random.Generator):
        out = {m: np.array(arrays[m], dtype=np.float64, copy=True) for m in MODALITIES}
        labels_b, lam = None, 1.0
        if not self.cfg.enabled or intensity <= 0.0:
            return out, labels, labels_b, lam
        if self.cfg.mixup and rng.random() < intensity:
            out, labels, labels_b, lam = mixup_batch(out, labels, self.cfg.mixup_alpha, rng)
        for m in MODALITIES:
            std = self.cfg.noise_std * intensity * self.feature_scale[m]
            if std > 0:
                out[m] = gaussian_noise(out[m], std, rng)
            rate = self.cfg.dropout_rate * intensity
            if rate > 0:
                out[m] = feature_dropout(out[m], rate, rng)
        out, _ = mask_batch(out, self.cfg.mask_prob * intensity, rng,
                            self.cfg.mask_granularity)
        return out, labels, labels_b, lam
