"""The assembled trimodal network: pathways -> cross-attention -> decision."""

from __future__ import annotations

import numpy as np

from . import decision, ops
from .config import ModelConfig
from .crossattn import register_cross_params, trimodal_cross
from .data import ModalityMask, FULL_MASK
from .decision import AblationFlags, FusionState
from .params import ParamStore
from .pathways import ModalityId, pathway_forward, register_pathway_params
from .tape import Node, Tape

LOG_VAR_NAME = "loss.log_var"


class TrimodalNet:
    """Owns the ParamStore and runs the end-to-end forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, num_loss_heads: int = 6):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        for m in ModalityId:
            register_pathway_params(self.store, m, cfg, seed)
        register_cross_params(self.store, cfg, seed)
        decision.register_decision_params(self.store, cfg, seed)
        self.store.register(LOG_VAR_NAME, np.zeros(num_loss_heads))

    @property
    def log_var(self) -> Node:
        return self.store[LOG_VAR_NAME]

    def forward(self, tape: Tape | None, face: np.ndarray, gesture: np.ndarray,
                voice: np.ndarray, *, ablation: AblationFlags | None = None,
                train_mode: bool = False,
                rng: np.random.Generator | None = None) -> dict[str, Node]:
        """Run a batch [B, dim(m)] per modality through the whole network.

        Returns every named tensor of the decision path as Nodes.
        """
        ab = ablation or AblationFlags()
        po = {}
        inputs = {"face": face, "gesture": gesture, "voice": voice}
        for m in ModalityId:
            po[m] = pathway_forward(tape, m, ops.constant(inputs[m.value]),
                                    self.store, self.cfg)
        if ab.no_cross_attention:
            zx = {m: po[m].z for m in ModalityId}
        else:
            cross = trimodal_cross(tape, po[ModalityId.FACE], po[ModalityId.GESTURE],
                                   po[ModalityId.VOICE], self.store, self.cfg)
            zx = {m: cross.for_modality(m) for m in ModalityId}

        g, z_fused, p_fusion = decision.gated_fusion(
            tape, zx[ModalityId.FACE], zx[ModalityId.GESTURE], zx[ModalityId.VOICE],
            self.store, self.cfg, gate_bypass=ab.no_gated_fusion,
            train_mode=train_mode, rng=rng)

        p_f, p_g, p_v = (po[m].p for m in ModalityId)
        c_f, c_g, c_v = (po[m].c for m in ModalityId)
        if ab.no_confidence:
            p_conf = decision.unweighted_mean_fusion(tape, p_f, p_g, p_v)
        else:
            p_conf = decision.confidence_weighted_fusion(tape, p_f, p_g, p_v,
                                                         c_f, c_g, c_v)
        p_ensemble = decision.ensemble(tape, p_conf, p_fusion)
        if ab.no_correction:
            p_corr = ops.constant(np.zeros_like(p_ensemble.value))
            p_final = p_ensemble
        else:
            p_corr, p_final = decision.mistake_correction(tape, p_f, p_g, p_v,
                                                          p_ensemble, self.store,
                                                          self.cfg)
        return {
            "z_face": po[ModalityId.FACE].z, "z_gesture": po[ModalityId.GESTURE].z,
            "z_voice": po[ModalityId.VOICE].z,
            "c_face": c_f, "c_gesture": c_g, "c_voice": c_v,
            "p_face": p_f, "p_gesture": p_g, "p_voice": p_v,
            "z_x_face": zx[ModalityId.FACE], "z_x_gesture": zx[ModalityId.GESTURE],
            "z_x_voice": zx[ModalityId.VOICE],
            "gate": g, "z_fused": z_fused, "p_fusion": p_fusion,
            "p_conf": p_conf, "p_ensemble": p_ensemble,
            "p_corr": p_corr, "p_final": p_final,
        }

    def predict(self, face: np.ndarray, gesture: np.ndarray, voice: np.ndarray,
                mask: ModalityMask = FULL_MASK,
                ablation: AblationFlags | None = None
                ) -> tuple[FusionState, np.ndarray]:
        """Zero out masked modalities, run inference, and rank identities by
        final logits (ties broken by lowest identity index)."""
        if mask.count() == 0:
            raise ValueError("no modality available: mask must keep at least one")
        face = np.atleast_2d(np.asarray(face, dtype=np.float64))
        gesture = np.atleast_2d(np.asarray(gesture, dtype=np.float64))
        voice = np.atleast_2d(np.asarray(voice, dtype=np.float64))
        if not mask.face:
            face = np.zeros_like(face)
        if not mask.gesture:
            gesture = np.zeros_like(gesture)
        if not mask.voice:
            voice = np.zeros_like(voice)
        out = self.forward(None, face, gesture, voice, ablation=ablation)
        state = FusionState(
            z_concat=np.concatenate([out["z_x_face"].value, out["z_x_gesture"].value,
                                     out["z_x_voice"].value], axis=-1),
            g=out["gate"].value, z_fused=out["z_fused"].value,
            p_fusion=out["p_fusion"].value, p_conf=out["p_conf"].value,
            p_ensemble=out["p_ensemble"].value, p_corr=out["p_corr"].value,
            p_final=out["p_final"].value,
        )
        rankings = rank_logits(out["p_final"].value)
        return state, rankings


def rank_logits(logits: np.ndarray) -> np.ndarray:
    """Identity indices sorted by descending logit; equal logits keep index order."""
    return np.argsort(-np.atleast_2d(logits), axis=-1, kind="stable")
