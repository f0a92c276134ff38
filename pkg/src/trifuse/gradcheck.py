"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import LossConfig, ModelConfig
from .losses import multitask_loss, smoothed_targets
from .model import TrimodalNet
from .params import ParamStore
from .tape import Node, Tape

KINK_GAP = 1e-3   # reject forwards whose relu preactivations sit this close to 0


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def grad_check(store: ParamStore, names: list[str],
               loss_fn: Callable[[Tape | None], Node], h: float = 1e-5,
               coords_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare analytic gradients against central differences
    (f(th+h) - f(th-h)) / 2h on the named parameters.

    loss_fn must rerun the forward pass from current parameter values and
    return the scalar loss node; with tape=None it may skip recording.
    """
    if h <= 0:
        raise ValueError(f"step h must be > 0, got {h}")
    store.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = {name: store[name].grad.copy() for name in names}

    worst, worst_param, checked = 0.0, "", 0
    for name in names:
        values = store[name].value
        flat = values.reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            coords = np.arange(flat.size)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=coords_per_param, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn(None).value)
            flat[i] = orig - h
            lm = float(loss_fn(None).value)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(a_flat[i]), abs(fd), 1e-8)
            rel = abs(a_flat[i] - fd) / denom
            checked += 1
            if rel > worst:
                worst, worst_param = rel, name
    return GradCheckResult(max_rel_error=worst, worst_param=worst_param, checked=checked)


def _small_model_config(num_classes: int = 5) -> ModelConfig:
    return ModelConfig(num_classes=num_classes,
                       input_dims={"face": 24, "gesture": 32, "voice": 16},
                       feature_dim=16, tokens=4, dense_hidden=20, conf_hidden=8,
                       gate_hidden=12, fusion_hidden=18, corr_hidden=10,
                       fusion_dropout=0.0)


def _randomize(store: ParamStore, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Random nonzero values everywhere, biases included, so no preactivation
    is structurally pinned at a relu kink."""
    for _, node in store.items():
        node.value[...] = rng.uniform(-scale, scale, size=node.value.shape)


def full_model_check(seed: int, h: float = 1e-5, coords_per_param: int = 4,
                     batch: int = 2, max_retries: int = 20) -> GradCheckResult:
    """Gradient-check the whole trimodal forward plus the multi-task loss.

    Resamples parameters/inputs when any relu preactivation falls within
    KINK_GAP of zero, since central differences are meaningless across a kink.
    """
    cfg = _small_model_config()
    loss_cfg = LossConfig()
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        model = TrimodalNet(cfg, seed=seed)
        _randomize(model.store, rng)
        model.log_var.value[...] = rng.uniform(-0.3, 0.3, size=model.log_var.value.shape)
        inputs = {m: rng.normal(size=(batch, d)) for m, d in cfg.input_dims.items()}
        labels = rng.integers(0, cfg.num_classes, size=batch)
        targets = smoothed_targets(labels, cfg.num_classes, loss_cfg.label_smoothing)

        def loss_fn(tape):
            outputs = model.forward(tape, inputs["face"], inputs["gesture"],
                                    inputs["voice"])
            total, _ = multitask_loss(tape, outputs, model.log_var, loss_cfg, targets)
            return total

        probe = Tape()
        loss_fn(probe)
        if probe.min_relu_gap < KINK_GAP:
            continue
        check_rng = np.random.default_rng(np.random.SeedSequence((seed, attempt, 1)))
        return grad_check(model.store, model.store.names(), loss_fn, h=h,
                          coords_per_param=coords_per_param, rng=check_rng)
    raise RuntimeError(f"could not find a kink-free forward in {max_retries} tries")


def module_checks(module: str, seeds: int = 5, h: float = 1e-5,
                  tol: float = 1e-4) -> list[tuple[str, GradCheckResult]]:
    """Named gradient checks for the CLI; 'all' runs every group."""
    groups = {
        "numcore": _numcore_checks,
        "pathways": lambda s: _subnet_checks(s, part="pathways"),
        "crossattn": lambda s: _subnet_checks(s, part="crossattn"),
        "decision": lambda s: _subnet_checks(s, part="decision"),
        "losses": lambda s: _subnet_checks(s, part="losses"),
        "full": lambda s: [("full", full_model_check(s))],
    }
    if module == "all":
        names = list(groups)
    elif module in groups:
        names = [module]
    else:
        raise ValueError(f"unknown module {module!r}, valid: all, {', '.join(groups)}")
    results = []
    for name in names:
        for seed in range(seeds):
            for label, res in groups[name](seed):
                results.append((f"{name}.{label}[seed={seed}]", res))
    return results


def _numcore_checks(seed: int) -> list[tuple[str, GradCheckResult]]:
    from . import ops

    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    store = ParamStore()
    x = store.register("x", rng.normal(size=(3, 6)))
    w = store.register("w", rng.normal(size=(4, 6)))
    b = store.register("b", rng.normal(size=4))
    probe = np.abs(x.value)
    if probe.min() < KINK_GAP:      # nudge away from relu kinks
        x.value[probe < KINK_GAP] += 2 * KINK_GAP
    weights = rng.normal(size=(3, 4))

    def loss_fn(tape):
        y = ops.dense(tape, x, w, b)
        y = ops.relu(tape, y)
        y = ops.softmax(tape, ops.sigmoid(tape, y))
        return ops.mean_all(tape, ops.mul_const(tape, y, weights))

    res = grad_check(store, store.names(), loss_fn)
    q = store.register("q", rng.normal(size=(2, 4, 5)))
    k = store.register("k", rng.normal(size=(2, 4, 5)))
    v = store.register("v", rng.normal(size=(2, 4, 5)))
    attn_weights = rng.normal(size=(2, 4, 5))

    def attn_loss(tape):
        out = ops.scaled_dot_attention(tape, q, k, v)
        return ops.mean_all(tape, ops.mul_const(tape, out, attn_weights))

    res2 = grad_check(store, ["q", "k", "v"], attn_loss)
    return [("elementwise", res), ("attention", res2)]


def _subnet_checks(seed: int, part: str) -> list[tuple[str, GradCheckResult]]:
    """Check one stage by running the full model but scoring only the
    parameters belonging to that stage."""
    prefix = {"pathways": "pathway.", "crossattn": "cross.",
              "decision": ("fusion.", "corr."), "losses": "loss."}[part]
    cfg = _small_model_config()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    model = TrimodalNet(cfg, seed=seed)
    _randomize(model.store, rng)
    inputs = {m: rng.normal(size=(2, d)) for m, d in cfg.input_dims.items()}
    labels = rng.integers(0, cfg.num_classes, size=2)
    loss_cfg = LossConfig()
    targets = smoothed_targets(labels, cfg.num_classes, loss_cfg.label_smoothing)

    def loss_fn(tape):
        outputs = model.forward(tape, inputs["face"], inputs["gesture"],
                                inputs["voice"])
        total, _ = multitask_loss(tape, outputs, model.log_var, loss_cfg, targets)
        return total

    probe = Tape()
    loss_fn(probe)
    if probe.min_relu_gap < KINK_GAP:
        return _subnet_checks(seed + 1000, part)
    names = [n for n in model.store.names() if n.startswith(prefix)]
    check_rng = np.random.default_rng(np.random.SeedSequence((seed, 8)))
    res = grad_check(model.store, names, loss_fn, coords_per_param=4, rng=check_rng)
    return [(part, res)]
