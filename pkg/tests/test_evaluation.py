"""Top-k accuracy, the 7-condition matrix, and report plumbing."""

import numpy as np
import pytest

from trifuse.config import Config, MODALITIES
from trifuse.data import ALL_MASKS, ModalityMask, build_splits, generate
from trifuse.decision import AblationFlags
from trifuse.evaluation import (EvalReport, ablation_ladder, eval_matrix,
                                format_ladder, topk_accuracy)
from trifuse.model import TrimodalNet, rank_logits

from helpers import randomize_store, small_model_config


def test_topk_hand_case():
    ranks = rank_logits(np.array([[0.1, 0.5, 0.2, 0.9]]))
    assert list(ranks[0][:2]) == [3, 1]
    assert topk_accuracy(ranks, np.array([1]), k=2) == 1.0
    assert topk_accuracy(ranks, np.array([0]), k=2) == 0.0


def test_topk_with_k_equal_classes_is_always_one(rng):
    logits = rng.normal(size=(30, 7))
    ranks = rank_logits(logits)
    labels = rng.integers(0, 7, size=30)
    assert topk_accuracy(ranks, labels, k=7) == 1.0


def test_top5_at_least_top1(rng):
    logits = rng.normal(size=(200, 12))
    ranks = rank_logits(logits)
    labels = rng.integers(0, 12, size=200)
    assert topk_accuracy(ranks, labels, 5) >= topk_accuracy(ranks, labels, 1)


def test_random_logits_match_binomial_baseline():
    rng = np.random.default_rng(99)
    n, k = 1000, 50
    ranks = rank_logits(rng.normal(size=(n, k)))
    labels = rng.integers(0, k, size=n)
    acc = topk_accuracy(ranks, labels, 1)
    bound = 3.0 * np.sqrt(0.02 * 0.98 / n)
    assert abs(acc - 1.0 / k) <= bound


def test_topk_permutation_invariant(rng):
    logits = rng.normal(size=(40, 6))
    labels = rng.integers(0, 6, size=40)
    ranks = rank_logits(logits)
    perm = rng.permutation(40)
    assert topk_accuracy(ranks, labels, 3) == topk_accuracy(ranks[perm], labels[perm], 3)


def test_topk_rejects_bad_k(rng):
    with pytest.raises(ValueError, match="k"):
        topk_accuracy(np.zeros((2, 3), dtype=int), np.zeros(2, dtype=int), 0)


def _tiny_setup(seed=0):
    cfg = Config()
    cfg.data.num_identities = 6
    cfg.data.train_per_identity = 6
    cfg.data.val_per_identity = 2
    cfg.data.test_per_identity = 3
    cfg.data.latent_rank = 8
    cfg.data.seed = seed
    cfg.model = small_model_config(num_classes=6)
    cfg.model.input_dims = {"face": 512, "gesture": 768, "voice": 256}
    ds = generate(cfg.data)
    manifest = build_splits(ds, val_fraction=2 / 11, test_fraction=3 / 11)
    test_set = ds.subset(manifest.indices("test"))
    multi = {i for i, s in ds.sessions_per_identity().items() if len(s) > 1}
    model = TrimodalNet(cfg.model, seed=1)
    randomize_store(model.store, np.random.default_rng(7), scale=0.2)
    return model, test_set, multi


def test_eval_matrix_covers_all_masks_and_groups():
    model, test_set, multi = _tiny_setup()
    report = eval_matrix(model, test_set, multi)
    assert set(report.conditions) == {m.name for m in ALL_MASKS}
    overall = report.cell("trimodal")
    assert overall.count == len(test_set)
    single = report.cell("trimodal", "single_session")
    multi_cell = report.cell("trimodal", "multi_session")
    assert single.count + multi_cell.count == overall.count
    for mask in ALL_MASKS:
        cell = report.cell(mask.name)
        assert cell.top5 >= cell.top1


def test_trimodal_mask_equals_unmasked_predict():
    model, test_set, multi = _tiny_setup()
    report = eval_matrix(model, test_set, multi, masks=(ModalityMask(),))
    _, ranks = model.predict(test_set.face, test_set.gesture, test_set.voice)
    expected = topk_accuracy(ranks, test_set.identity, 1)
    assert report.cell("trimodal").top1 == expected


def test_masked_modalities_cannot_influence_the_cell(rng):
    # scrambling the content of masked modalities must not move the metrics
    model, test_set, multi = _tiny_setup()
    mask = ModalityMask.from_names(["face"])
    base = eval_matrix(model, test_set, multi, masks=(mask,))
    scrambled = test_set.subset(np.arange(len(test_set)))
    scrambled.gesture[...] = rng.normal(size=scrambled.gesture.shape)
    scrambled.voice[...] = rng.normal(size=scrambled.voice.shape)
    moved = eval_matrix(model, scrambled, multi, masks=(mask,))
    assert base.cell("face").top1 == moved.cell("face").top1
    assert base.cell("face").top5 == moved.cell("face").top5


def test_eval_matrix_rejects_empty_test_set():
    model, test_set, multi = _tiny_setup()
    with pytest.raises(ValueError, match="empty"):
        eval_matrix(model, test_set.subset(np.array([], dtype=int)), multi)


def test_report_json_roundtrip():
    model, test_set, multi = _tiny_setup()
    report = eval_matrix(model, test_set, multi,
                         ablation=AblationFlags(no_confidence=True),
                         config_hash="abc123")
    back = EvalReport.from_dict(
        __import__("json").loads(report.to_json()))
    assert back.to_dict() == report.to_dict()
    assert back.ablation == ["no_confidence"]
    assert back.config_hash == "abc123"


def test_report_table_formats_percentages():
    model, test_set, multi = _tiny_setup()
    report = eval_matrix(model, test_set, multi)
    table = report.format_table()
    assert "trimodal" in table and "top1" in table
    cell = report.cell("trimodal").top1
    assert f"{100.0 * cell:.2f}" in table


def test_ladder_modes_and_labels():
    calls = []

    def fake_run(flags):
        calls.append(tuple(flags.active()))
        model, test_set, multi = _tiny_setup()
        return eval_matrix(model, test_set, multi, ablation=flags)

    rows = ablation_ladder(fake_run, mode="cumulative")
    assert [r[0] for r in rows] == ["full", "w/o correction", "w/o cross_attention",
                                    "w/o gated_fusion", "w/o confidence",
                                    "w/o augmentation"]
    assert calls[0] == ()
    assert len(calls[-1]) == 5   # cumulative: all five flags at the end

    calls.clear()
    ablation_ladder(fake_run, mode="single")
    assert all(len(c) <= 1 for c in calls)
    assert format_ladder(rows).count("w/o") == 5

    with pytest.raises(ValueError, match="mode"):
        ablation_ladder(fake_run, mode="bogus")
