"""Modality-specific pathways: dense trunk, tokenized self-attention,
confidence head, and per-modality classifier."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import ops
from .config import DEFAULT_INPUT_DIMS, ModelConfig
from .ops import ShapeError
from .params import ParamStore, init_dense
from .tape import Node, Tape


class ModalityId(Enum):
    FACE = "face"
    GESTURE = "gesture"
    VOICE = "voice"

    @property
    def default_dim(self) -> int:
        return DEFAULT_INPUT_DIMS[self.value]


MODALITY_ORDER = (ModalityId.FACE, ModalityId.GESTURE, ModalityId.VOICE)


@dataclass
class PathwayOutput:
    """Refined feature z, scalar confidence c in (0,1), and class logits p."""
    z: Node
    c: Node
    p: Node


def register_attention_params(store: ParamStore, prefix: str, token_dim: int, seed: int) -> None:
    for proj in ("q", "k", "v"):
        init_dense(store, f"{prefix}.attn.{proj}", token_dim, token_dim, seed)


def register_pathway_params(store: ParamStore, m: ModalityId, cfg: ModelConfig, seed: int) -> None:
    prefix = f"pathway.{m.value}"
    in_dim = cfg.input_dims[m.value]
    init_dense(store, f"{prefix}.dense1", cfg.dense_hidden, in_dim, seed)
    init_dense(store, f"{prefix}.dense2", cfg.feature_dim, cfg.dense_hidden, seed)
    register_attention_params(store, prefix, cfg.token_dim, seed)
    init_dense(store, f"{prefix}.conf1", cfg.conf_hidden, cfg.feature_dim, seed)
    init_dense(store, f"{prefix}.conf2", 1, cfg.conf_hidden, seed)
    init_dense(store, f"{prefix}.cls", cfg.num_classes, cfg.feature_dim, seed)


def tokenized_attention(tape: Tape | None, x: Node, store: ParamStore, prefix: str,
                        tokens: int) -> Node:
    """Reshape [B, D] into tokens, run single-head attention with learned
    Q/K/V projections, add the residual, and flatten back to [B, D]."""
    feat = x.value.shape[-1]
    if feat % tokens != 0:
        raise ShapeError(f"attention: feature dim {feat} not divisible by {tokens} tokens")
    token_dim = feat // tokens
    lead = x.value.shape[:-1]
    tok = ops.reshape(tape, x, lead + (tokens, token_dim))
    q = ops.dense(tape, tok, store[f"{prefix}.attn.q.W"], store[f"{prefix}.attn.q.b"])
    k = ops.dense(tape, tok, store[f"{prefix}.attn.k.W"], store[f"{prefix}.attn.k.b"])
    v = ops.dense(tape, tok, store[f"{prefix}.attn.v.W"], store[f"{prefix}.attn.v.b"])
    attended = ops.scaled_dot_attention(tape, q, k, v)
    return ops.reshape(tape, ops.add(tape, tok, attended), x.value.shape)


def self_attention(tape: Tape | None, m: ModalityId, x: Node, store: ParamStore,
                   tokens: int) -> Node:
    return tokenized_attention(tape, x, store, f"pathway.{m.value}", tokens)


def pathway_forward(tape: Tape | None, m: ModalityId, x_raw: Node, store: ParamStore,
                    cfg: ModelConfig) -> PathwayOutput:
    """Run one modality pathway on [B, dim(m)] (or a single [dim(m)] vector)."""
    expected = cfg.input_dims[m.value]
    squeeze = x_raw.value.ndim == 1
    if squeeze:
        x_raw = ops.reshape(tape, x_raw, (1, x_raw.value.shape[0]))
    if x_raw.value.ndim != 2 or x_raw.value.shape[-1] != expected:
        raise ShapeError(
            f"pathway {m.value}: input shape {x_raw.value.shape}, expected [*, {expected}]"
        )
    prefix = f"pathway.{m.value}"
    h = ops.relu(tape, ops.dense(tape, x_raw, store[f"{prefix}.dense1.W"],
                                 store[f"{prefix}.dense1.b"]))
    x = ops.dense(tape, h, store[f"{prefix}.dense2.W"], store[f"{prefix}.dense2.b"])
    z = self_attention(tape, m, x, store, cfg.tokens)
    ch = ops.relu(tape, ops.dense(tape, z, store[f"{prefix}.conf1.W"],
                                  store[f"{prefix}.conf1.b"]))
    c = ops.sigmoid(tape, ops.dense(tape, ch, store[f"{prefix}.conf2.W"],
                                    store[f"{prefix}.conf2.b"]))
    p = ops.dense(tape, z, store[f"{prefix}.cls.W"], store[f"{prefix}.cls.b"])
    if squeeze:
        z = ops.reshape(tape, z, (cfg.feature_dim,))
        c = ops.reshape(tape, c, (1,))
        p = ops.reshape(tape, p, (cfg.num_classes,))
    return PathwayOutput(z=z, c=c, p=p)


def zero_input(m: ModalityId, cfg: ModelConfig, batch: int = 1) -> np.ndarray:
    return np.zeros((batch, cfg.input_dims[m.value]))
