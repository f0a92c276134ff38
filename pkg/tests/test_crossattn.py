"""Cross-modality projection and joint refinement."""

import numpy as np

from trifuse.crossattn import (cross_attention_block, cross_project,
                               register_cross_params, trimodal_cross)
from trifuse.model import TrimodalNet
from trifuse.params import ParamStore
from trifuse.pathways import ModalityId, PathwayOutput
from trifuse.tape import Node

from helpers import param_values, randomize_store, small_model_config, straightline_forward


def _cross_store(cfg, seed=0):
    store = ParamStore()
    register_cross_params(store, cfg, seed)
    return store


def _po(z, k=5):
    return PathwayOutput(z=Node(z), c=Node([0.5]), p=Node(np.zeros(k)))


def test_cross_project_zero_inputs_zero_bias():
    cfg = small_model_config()
    store = _cross_store(cfg)
    store["cross.face.proj.b"].value[...] = 0.0
    out = cross_project(None, ModalityId.FACE, Node(np.zeros(16)), Node(np.zeros(16)), store)
    assert np.array_equal(out.value, np.zeros(16))


def test_cross_project_identity_matrix_sums_inputs(rng):
    cfg = small_model_config()
    store = _cross_store(cfg)
    store["cross.face.proj.W"].value[...] = np.eye(16)
    store["cross.face.proj.b"].value[...] = 0.0
    za, zb = rng.normal(size=16), rng.normal(size=16)
    out = cross_project(None, ModalityId.FACE, Node(za), Node(zb), store)
    assert np.allclose(out.value, za + zb, atol=1e-15)


def test_cross_project_linearity_identity(rng):
    # proj(a) + proj(b) - proj(a + b) == bias, exactly up to rounding
    cfg = small_model_config()
    store = _cross_store(cfg)
    randomize_store(store, rng)
    za, zb = rng.normal(size=16), rng.normal(size=16)
    per_term = cross_project(None, ModalityId.VOICE, Node(za), Node(zb), store)
    w = store["cross.voice.proj.W"].value
    b = store["cross.voice.proj.b"].value
    on_sum = w @ (za + zb) + b
    assert np.allclose(per_term.value - on_sum, b, atol=1e-12)


def test_zero_weights_leave_features_untouched(rng):
    cfg = small_model_config()
    store = _cross_store(cfg)
    for _, node in store.items():
        node.value[...] = 0.0
    zs = {m: rng.normal(size=16) for m in ModalityId}
    out = trimodal_cross(None, _po(zs[ModalityId.FACE]), _po(zs[ModalityId.GESTURE]),
                         _po(zs[ModalityId.VOICE]), store, cfg)
    for m in ModalityId:
        assert np.allclose(out.for_modality(m).value, zs[m], atol=1e-15)


def test_branches_read_pre_cross_values_only(rng):
    # hand-compute each branch independently from the same inputs and compare
    cfg = small_model_config()
    model = TrimodalNet(cfg, seed=1)
    randomize_store(model.store, rng)
    vals = param_values(model.store)
    xf, xg, xv = rng.normal(size=24), rng.normal(size=32), rng.normal(size=16)
    expected = straightline_forward(vals, xf, xg, xv, cfg)
    out = model.forward(None, xf[None], xg[None], xv[None])
    for name in ("face", "gesture", "voice"):
        assert np.allclose(out[f"z_x_{name if name != 'gesture' else 'gesture'}"].value[0],
                           expected["zx"][name], rtol=1e-11, atol=1e-12)


def test_injection_is_symmetric_in_source_order(rng):
    cfg = small_model_config()
    store = _cross_store(cfg)
    randomize_store(store, rng)
    za, zb = rng.normal(size=16), rng.normal(size=16)
    ab = cross_project(None, ModalityId.GESTURE, Node(za), Node(zb), store)
    ba = cross_project(None, ModalityId.GESTURE, Node(zb), Node(za), store)
    assert np.allclose(ab.value, ba.value, atol=1e-15)


def test_cross_block_identity_when_injection_and_attention_are_zero(rng):
    cfg = small_model_config()
    store = _cross_store(cfg)
    for _, node in store.items():
        node.value[...] = 0.0
    z = rng.normal(size=16)
    out = cross_attention_block(None, ModalityId.FACE, Node(z), Node(np.zeros(16)),
                                store, cfg.tokens)
    assert np.allclose(out.value, z, atol=1e-15)


def test_masked_modality_contribution_is_sample_independent(rng):
    # with gesture zeroed, the gesture term entering any branch is a constant
    cfg = small_model_config()
    model = TrimodalNet(cfg, seed=2)
    randomize_store(model.store, rng)
    xf1, xf2 = rng.normal(size=(1, 24)), rng.normal(size=(1, 24))
    xv1, xv2 = rng.normal(size=(1, 16)), rng.normal(size=(1, 16))
    zero_g = np.zeros((1, 32))
    out1 = model.forward(None, xf1, zero_g, xv1)
    out2 = model.forward(None, xf2, zero_g, xv2)
    # the gesture pathway output is input-independent here, so the injected
    # gesture contribution must be identical across samples
    assert np.array_equal(out1["z_gesture"].value, out2["z_gesture"].value)
    assert np.array_equal(out1["p_gesture"].value, out2["p_gesture"].value)


def test_cross_output_matches_straightline_oracle(rng):
    cfg = small_model_config(num_classes=4, feature_dim=8, tokens=2,
                             input_dims={"face": 10, "gesture": 12, "voice": 6},
                             dense_hidden=9, conf_hidden=5)
    model = TrimodalNet(cfg, seed=5)
    randomize_store(model.store, rng)
    vals = param_values(model.store)
    xf, xg, xv = rng.normal(size=10), rng.normal(size=12), rng.normal(size=6)
    expected = straightline_forward(vals, xf, xg, xv, cfg)
    out = model.forward(None, xf[None], xg[None], xv[None])
    assert np.allclose(out["z_x_face"].value[0], expected["zx"]["face"],
                       rtol=1e-11, atol=1e-12)
    assert np.allclose(out["z_x_gesture"].value[0], expected["zx"]["gesture"],
                       rtol=1e-11, atol=1e-12)
    assert np.allclose(out["z_x_voice"].value[0], expected["zx"]["voice"],
                       rtol=1e-11, atol=1e-12)
