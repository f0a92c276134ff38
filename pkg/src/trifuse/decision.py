"""Fusion classification and final decision: gated feature fusion,
confidence-weighted fusion, ensemble averaging, and mistake correction."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .config import ModelConfig
from .params import ParamStore, init_dense
from .tape import Node, Tape


@dataclass
class AblationFlags:
    """Module bypasses; each removes exactly the named mechanism while
    keeping the data path alive."""
    no_correction: bool = False
    no_cross_attention: bool = False
    no_gated_fusion: bool = False
    no_confidence: bool = False
    no_augmentation: bool = False

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_names(cls, names) -> "AblationFlags":
        flags = cls()
        for name in names:
            if not hasattr(flags, name):
                raise ValueError(
                    f"unknown ablation flag {name!r}, valid: {cls.names()}"
                )
            setattr(flags, name, True)
        return flags

    def active(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]


@dataclass
class FusionState:
    """Per-sample record of every tensor the decision block produced."""
    z_concat: np.ndarray
    g: np.ndarray
    z_fused: np.ndarray
    p_fusion: np.ndarray
    p_conf: np.ndarray
    p_ensemble: np.ndarray
    p_corr: np.ndarray
    p_final: np.ndarray


def register_decision_params(store: ParamStore, cfg: ModelConfig, seed: int) -> None:
    init_dense(store, "fusion.gate1", cfg.gate_hidden, cfg.concat_dim, seed)
    init_dense(store, "fusion.gate2", cfg.concat_dim, cfg.gate_hidden, seed)
    init_dense(store, "fusion.mlp1", cfg.fusion_hidden, cfg.concat_dim, seed)
    init_dense(store, "fusion.mlp2", cfg.num_classes, cfg.fusion_hidden, seed)
    init_dense(store, "corr.mlp1", cfg.corr_hidden, 4 * cfg.num_classes, seed)
    init_dense(store, "corr.mlp2", cfg.num_classes, cfg.corr_hidden, seed)


def gated_fusion(tape: Tape | None, z_x_face: Node, z_x_gest: Node, z_x_voice: Node,
                 store: ParamStore, cfg: ModelConfig, *, gate_bypass: bool = False,
                 train_mode: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[Node, Node, Node]:
    """Concatenate the three refined features, gate them elementwise, and
    classify the gated vector. Returns (g, z_fused, p_fusion)."""
    z_concat = ops.concat(tape, [z_x_face, z_x_gest, z_x_voice])
    if gate_bypass:
        g = ops.constant(np.ones_like(z_concat.value))
        z_fused = z_concat
    else:
        gh = ops.relu(tape, ops.dense(tape, z_concat, store["fusion.gate1.W"],
                                      store["fusion.gate1.b"]))
        g = ops.sigmoid(tape, ops.dense(tape, gh, store["fusion.gate2.W"],
                                        store["fusion.gate2.b"]))
        z_fused = ops.mul(tape, z_concat, g)
    h = ops.relu(tape, ops.dense(tape, z_fused, store["fusion.mlp1.W"],
                                 store["fusion.mlp1.b"]))
    if train_mode and cfg.fusion_dropout > 0.0:
        if rng is None:
            raise ValueError("train_mode fusion needs an rng for dropout")
        keep = 1.0 - cfg.fusion_dropout
        mask = (rng.random(h.value.shape) < keep) / keep
        h = ops.mul_const(tape, h, mask)
    p_fusion = ops.dense(tape, h, store["fusion.mlp2.W"], store["fusion.mlp2.b"])
    return g, z_fused, p_fusion


def confidence_weighted_fusion(tape: Tape | None, p_f: Node, p_g: Node, p_v: Node,
                               c_f: Node, c_g: Node, c_v: Node) -> Node:
    """Average the three logit vectors under squared-confidence weights."""
    k = p_f.value.shape[-1]
    w_f = ops.mul(tape, c_f, c_f)
    w_g = ops.mul(tape, c_g, c_g)
    w_v = ops.mul(tape, c_v, c_v)
    num = ops.add(tape, ops.add(tape,
                                ops.mul(tape, ops.repeat_last(tape, w_f, k), p_f),
                                ops.mul(tape, ops.repeat_last(tape, w_g, k), p_g)),
                  ops.mul(tape, ops.repeat_last(tape, w_v, k), p_v))
    den = ops.add(tape, ops.add(tape, w_f, w_g), w_v)
    return ops.div(tape, num, ops.repeat_last(tape, den, k))


def unweighted_mean_fusion(tape: Tape | None, p_f: Node, p_g: Node, p_v: Node) -> Node:
    return ops.scale(tape, ops.add(tape, ops.add(tape, p_f, p_g), p_v), 1.0 / 3.0)


def ensemble(tape: Tape | None, p_conf: Node, p_fusion: Node) -> Node:
    return ops.scale(tape, ops.add(tape, p_conf, p_fusion), 0.5)


def mistake_correction(tape: Tape | None, p_f: Node, p_g: Node, p_v: Node,
                       p_ensemble: Node, store: ParamStore,
                       cfg: ModelConfig) -> tuple[Node, Node]:
    """Lightweight refinement: p_corr from all four logit vectors, applied at
    a fixed small weight so it cannot dominate the ensemble."""
    x = ops.concat(tape, [p_f, p_g, p_v, p_ensemble])
    h = ops.relu(tape, ops.dense(tape, x, store["corr.mlp1.W"], store["corr.mlp1.b"]))
    p_corr = ops.dense(tape, h, store["corr.mlp2.W"], store["corr.mlp2.b"])
    p_final = ops.add(tape, p_ensemble, ops.scale(tape, p_corr, cfg.correction_weight))
    return p_corr, p_final
