"""Trimodal cross-attention: each branch receives a learned projection of
the other two refined features, then re-attends in its own space."""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .config import ModelConfig
from .params import ParamStore, init_dense
from .pathways import ModalityId, PathwayOutput, tokenized_attention, register_attention_params
from .tape import Node, Tape


@dataclass
class CrossOutput:
    z_x_face: Node
    z_x_gest: Node
    z_x_voice: Node

    def for_modality(self, m: ModalityId) -> Node:
        return {ModalityId.FACE: self.z_x_face,
                ModalityId.GESTURE: self.z_x_gest,
                ModalityId.VOICE: self.z_x_voice}[m]


def register_cross_params(store: ParamStore, cfg: ModelConfig, seed: int) -> None:
    for m in ModalityId:
        prefix = f"cross.{m.value}"
        init_dense(store, f"{prefix}.proj", cfg.feature_dim, cfg.feature_dim, seed)
        register_attention_params(store, prefix, cfg.token_dim, seed)


def cross_project(tape: Tape | None, target: ModalityId, z_a: Node, z_b: Node,
                  store: ParamStore) -> Node:
    """Project both non-target features into the target space with one shared
    linear map, applied per term. Because the map is linear this differs from
    projecting the sum only by one extra bias application."""
    w = store[f"cross.{target.value}.proj.W"]
    b = store[f"cross.{target.value}.proj.b"]
    return ops.add(tape, ops.dense(tape, z_a, w, b), ops.dense(tape, z_b, w, b))


def cross_attention_block(tape: Tape | None, target: ModalityId, z_t: Node,
                          injected: Node, store: ParamStore, tokens: int) -> Node:
    """s = z_t + injected, then s + Attn(s) over the same token scheme as the
    pathways (separate parameters)."""
    s = ops.add(tape, z_t, injected)
    # tokenized_attention includes the residual, so this is s + Attn(s).
    return tokenized_attention(tape, s, store, f"cross.{target.value}", tokens)


def trimodal_cross(tape: Tape | None, po_face: PathwayOutput, po_gest: PathwayOutput,
                   po_voice: PathwayOutput, store: ParamStore, cfg: ModelConfig) -> CrossOutput:
    """Refine all three branches jointly. Every branch reads the pre-cross
    pathway outputs, so evaluation order cannot leak updates."""
    z = {ModalityId.FACE: po_face.z, ModalityId.GESTURE: po_gest.z,
         ModalityId.VOICE: po_voice.z}
    refined = {}
    for target in ModalityId:
        others = [m for m in ModalityId if m is not target]
        injected = cross_project(tape, target, z[others[0]], z[others[1]], store)
        refined[target] = cross_attention_block(tape, target, z[target], injected,
                                                store, cfg.tokens)
    return CrossOutput(z_x_face=refined[ModalityId.FACE],
                       z_x_gest=refined[ModalityId.GESTURE],
                       z_x_voice=refined[ModalityId.VOICE])
