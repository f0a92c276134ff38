"""Shared test utilities, including an independent straight-line oracle of
the whole forward pass written directly from the fusion equations."""

from __future__ import annotations

import numpy as np

from trifuse.config import ModelConfig


def small_model_config(num_classes: int = 5, **overrides) -> ModelConfig:
    kwargs = dict(num_classes=num_classes,
                  input_dims={"face": 24, "gesture": 32, "voice": 16},
                  feature_dim=16, tokens=4, dense_hidden=20, conf_hidden=8,
                  gate_hidden=12, fusion_hidden=18, corr_hidden=10,
                  fusion_dropout=0.0)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def param_values(store) -> dict[str, np.ndarray]:
    return {name: node.value.copy() for name, node in store.items()}


def randomize_store(store, rng, scale=0.4):
    for _, node in store.items():
        node.value[...] = rng.uniform(-scale, scale, size=node.value.shape)


def _relu(a):
    return np.maximum(a, 0.0)


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _softmax_rows(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attention(vec, vals, prefix, tokens):
    tok = vec.reshape(tokens, -1)
    q = tok @ vals[f"{prefix}.attn.q.W"].T + vals[f"{prefix}.attn.q.b"]
    k = tok @ vals[f"{prefix}.attn.k.W"].T + vals[f"{prefix}.attn.k.b"]
    v = tok @ vals[f"{prefix}.attn.v.W"].T + vals[f"{prefix}.attn.v.b"]
    weights = _softmax_rows(q @ k.T / np.sqrt(q.shape[-1]))
    return (tok + weights @ v).reshape(-1)


def straightline_forward(vals: dict[str, np.ndarray], x_face, x_gest, x_voice,
                         cfg: ModelConfig) -> dict:
    """Plain-numpy re-derivation of the forward pass for single vectors."""
    feats, confs, logits = {}, {}, {}
    for name, x in (("face", x_face), ("gesture", x_gest), ("voice", x_voice)):
        pre = f"pathway.{name}"
        h = _relu(vals[f"{pre}.dense1.W"] @ x + vals[f"{pre}.dense1.b"])
        x2 = vals[f"{pre}.dense2.W"] @ h + vals[f"{pre}.dense2.b"]
        z = _attention(x2, vals, pre, cfg.tokens)
        ch = _relu(vals[f"{pre}.conf1.W"] @ z + vals[f"{pre}.conf1.b"])
        c = float(_sigmoid(vals[f"{pre}.conf2.W"] @ ch + vals[f"{pre}.conf2.b"])[0])
        p = vals[f"{pre}.cls.W"] @ z + vals[f"{pre}.cls.b"]
        feats[name], confs[name], logits[name] = z, c, p

    order = ("face", "gesture", "voice")
    zx = {}
    for tgt in order:
        a, b = [m for m in order if m != tgt]
        w = vals[f"cross.{tgt}.proj.W"]
        bias = vals[f"cross.{tgt}.proj.b"]
        injected = (w @ feats[a] + bias) + (w @ feats[b] + bias)
        zx[tgt] = _attention(feats[tgt] + injected, vals, f"cross.{tgt}", cfg.tokens)

    z_concat = np.concatenate([zx["face"], zx["gesture"], zx["voice"]])
    gh = _relu(vals["fusion.gate1.W"] @ z_concat + vals["fusion.gate1.b"])
    g = _sigmoid(vals["fusion.gate2.W"] @ gh + vals["fusion.gate2.b"])
    z_fused = z_concat * g
    fh = _relu(vals["fusion.mlp1.W"] @ z_fused + vals["fusion.mlp1.b"])
    p_fusion = vals["fusion.mlp2.W"] @ fh + vals["fusion.mlp2.b"]

    cf, cg, cv = confs["face"], confs["gesture"], confs["voice"]
    den = cf ** 2 + cg ** 2 + cv ** 2
    p_conf = (cf ** 2 * logits["face"] + cg ** 2 * logits["gesture"]
              + cv ** 2 * logits["voice"]) / den
    p_ensemble = 0.5 * (p_conf + p_fusion)
    corr_in = np.concatenate([logits["face"], logits["gesture"], logits["voice"],
                              p_ensemble])
    hc = _relu(vals["corr.mlp1.W"] @ corr_in + vals["corr.mlp1.b"])
    p_corr = vals["corr.mlp2.W"] @ hc + vals["corr.mlp2.b"]
    p_final = p_ensemble + cfg.correction_weight * p_corr
    return {
        "z": feats, "c": confs, "p": logits, "zx": zx,
        "z_concat": z_concat, "g": g, "z_fused": z_fused, "p_fusion": p_fusion,
        "p_conf": p_conf, "p_ensemble": p_ensemble, "p_corr": p_corr,
        "p_final": p_final,
    }
