"""Differentiable operations on Nodes.

Every op validates operand shapes up front and, when a tape is supplied,
records a closure computing its vector-Jacobian product. Passing
``tape=None`` runs the same forward math without recording (inference).

Shape discipline: elementwise ops require identical shapes. The only
implicit broadcast is the bias add inside ``dense``; everything else
(e.g. expanding a [B,1] weight to [B,K]) goes through an explicit op.
"""

from __future__ import annotations

import math

import numpy as np

from .tape import Node, Tape, accumulate


class ShapeError(ValueError):
    """Operand shapes do not conform; message names both shapes."""


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: operand shapes {a.value.shape} vs {b.value.shape}")


def constant(x) -> Node:
    return Node(x)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(tape: Tape | None, a: Node, b: Node) -> Node:
    _same_shape("add", a, b)
    out = Node(a.value + b.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad)
            accumulate(b, out.grad)
        tape.record(bwd)
    return out


def sub(tape: Tape | None, a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)
    out = Node(a.value - b.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad)
            accumulate(b, -out.grad)
        tape.record(bwd)
    return out


def mul(tape: Tape | None, a: Node, b: Node) -> Node:
    _same_shape("mul", a, b)
    out = Node(a.value * b.value)
    if tape is not None:
        av, bv = a.value, b.value
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * bv)
            accumulate(b, out.grad * av)
        tape.record(bwd)
    return out


def div(tape: Tape | None, a: Node, b: Node) -> Node:
    _same_shape("div", a, b)
    out = Node(a.value / b.value)
    if tape is not None:
        av, bv = a.value, b.value
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad / bv)
            accumulate(b, -out.grad * av / (bv * bv))
        tape.record(bwd)
    return out


def neg(tape: Tape | None, a: Node) -> Node:
    out = Node(-a.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, -out.grad)
        tape.record(bwd)
    return out


def scale(tape: Tape | None, a: Node, k: float) -> Node:
    out = Node(a.value * k)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * k)
        tape.record(bwd)
    return out


def add_scalar(tape: Tape | None, a: Node, k: float) -> Node:
    out = Node(a.value + k)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad)
        tape.record(bwd)
    return out


def rsub_scalar(tape: Tape | None, k: float, a: Node) -> Node:
    """k - a."""
    out = Node(k - a.value)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, -out.grad)
        tape.record(bwd)
    return out


def mul_const(tape: Tape | None, a: Node, c: np.ndarray) -> Node:
    """Elementwise multiply by a non-differentiable constant array."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != () and c.shape != a.value.shape:
        raise ShapeError(f"mul_const: operand shapes {a.value.shape} vs {c.shape}")
    out = Node(a.value * c)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * c)
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities

def relu(tape: Tape | None, a: Node) -> Node:
    out = Node(np.maximum(a.value, 0.0))
    if tape is not None:
        if a.value.size:
            gap = float(np.min(np.abs(a.value)))
            if gap < tape.min_relu_gap:
                tape.min_relu_gap = gap
        mask = a.value > 0.0
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * mask)
        tape.record(bwd)
    return out


SIGMOID_EPS = 1e-12


def sigmoid(tape: Tape | None, a: Node) -> Node:
    """Elementwise logistic, clamped to [eps, 1-eps] so the output stays
    strictly inside (0, 1) even where float64 would round to 0 or 1 (the
    squared-confidence denominator downstream relies on this)."""
    # Split by sign to avoid overflow in exp for large |x|.
    v = a.value
    out_val = np.empty_like(v)
    pos = v >= 0
    out_val[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_val[~pos] = ev / (1.0 + ev)
    np.clip(out_val, SIGMOID_EPS, 1.0 - SIGMOID_EPS, out=out_val)
    out = Node(out_val)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * out_val * (1.0 - out_val))
        tape.record(bwd)
    return out


def exp(tape: Tape | None, a: Node) -> Node:
    out = Node(np.exp(a.value))
    if tape is not None:
        ov = out.value
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad * ov)
        tape.record(bwd)
    return out


def log(tape: Tape | None, a: Node) -> Node:
    out = Node(np.log(a.value))
    if tape is not None:
        av = a.value
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad / av)
        tape.record(bwd)
    return out


def pow_const(tape: Tape | None, a: Node, p: float) -> Node:
    """a ** p for a fixed exponent; a must be nonnegative where p is fractional."""
    out = Node(np.power(a.value, p))
    if tape is not None:
        av = a.value
        def bwd():
            if out.grad is None:
                return
            if p == 0.0:
                return
            accumulate(a, out.grad * p * np.power(av, p - 1.0))
        tape.record(bwd)
    return out


def softmax(tape: Tape | None, a: Node) -> Node:
    """Max-subtracted softmax over the last axis."""
    v = a.value
    if v.ndim < 1 or v.shape[-1] < 1:
        raise ShapeError(f"softmax: need at least one entry, got shape {v.shape}")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    q = e / e.sum(axis=-1, keepdims=True)
    out = Node(q)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            accumulate(a, q * (g - (q * g).sum(axis=-1, keepdims=True)))
        tape.record(bwd)
    return out


def log_softmax(tape: Tape | None, a: Node) -> Node:
    v = a.value
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    lsm = shifted - lse
    out = Node(lsm)
    if tape is not None:
        q = np.exp(lsm)
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            accumulate(a, g - q * g.sum(axis=-1, keepdims=True))
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand actually had."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(tape: Tape | None, a: Node, b: Node) -> Node:
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError(f"matmul: need 2-D operands, got {a.value.shape} @ {b.value.shape}")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.value.shape} @ {b.value.shape}")
    out = Node(np.matmul(a.value, b.value))
    if tape is not None:
        av, bv = a.value, b.value
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            accumulate(a, _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape))
            accumulate(b, _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape))
        tape.record(bwd)
    return out


def transpose_last(tape: Tape | None, a: Node) -> Node:
    out = Node(a.value.swapaxes(-1, -2))
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad.swapaxes(-1, -2))
        tape.record(bwd)
    return out


def dense(tape: Tape | None, x: Node, w: Node, b: Node | None = None) -> Node:
    """x @ w.T + b with x of shape [..., n], w [m, n], b [m]."""
    if w.value.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got {w.value.shape}")
    m, n = w.value.shape
    if x.value.shape[-1] != n:
        raise ShapeError(f"dense: input shape {x.value.shape} vs weight {w.value.shape}")
    if b is not None and b.value.shape != (m,):
        raise ShapeError(f"dense: bias shape {b.value.shape} vs weight {w.value.shape}")
    y = x.value @ w.value.T
    if b is not None:
        y = y + b.value
    out = Node(y)
    if tape is not None:
        xv = x.value
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            g2 = g.reshape(-1, m)
            x2 = xv.reshape(-1, n)
            accumulate(w, g2.T @ x2)
            accumulate(x, (g2 @ w.value).reshape(xv.shape))
            if b is not None:
                accumulate(b, g2.sum(axis=0))
        tape.record(bwd)
    return out


def scaled_dot_attention(tape: Tape | None, q: Node, k: Node, v: Node) -> Node:
    """softmax(Q K^T / sqrt(d)) V, rows attending over rows.

    Accepts [T, d] or batched [B, T, d] operands.
    """
    for name, node in (("Q", q), ("K", k), ("V", v)):
        if node.value.ndim < 2:
            raise ShapeError(f"attention: {name} must be at least 2-D, got {node.value.shape}")
    if not (q.value.shape == k.value.shape == v.value.shape):
        raise ShapeError(
            f"attention: Q/K/V shapes differ, {q.value.shape} / {k.value.shape} / {v.value.shape}"
        )
    d = q.value.shape[-1]
    scores = scale(tape, matmul(tape, q, transpose_last(tape, k)), 1.0 / math.sqrt(d))
    weights = softmax(tape, scores)
    return matmul(tape, weights, v)


# ---------------------------------------------------------------------------
# shape plumbing and reductions

def reshape(tape: Tape | None, a: Node, shape: tuple[int, ...]) -> Node:
    out = Node(a.value.reshape(shape))
    if tape is not None:
        orig = a.value.shape
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad.reshape(orig))
        tape.record(bwd)
    return out


def concat(tape: Tape | None, parts: list[Node]) -> Node:
    """Concatenate along the last axis."""
    if not parts:
        raise ShapeError("concat: no operands")
    lead = parts[0].value.shape[:-1]
    for p in parts:
        if p.value.shape[:-1] != lead:
            raise ShapeError(
                f"concat: leading dims differ, {parts[0].value.shape} vs {p.value.shape}"
            )
    out = Node(np.concatenate([p.value for p in parts], axis=-1))
    if tape is not None:
        widths = [p.value.shape[-1] for p in parts]
        def bwd():
            if out.grad is None:
                return
            start = 0
            for p, w in zip(parts, widths):
                accumulate(p, out.grad[..., start:start + w])
                start += w
        tape.record(bwd)
    return out


def repeat_last(tape: Tape | None, a: Node, n: int) -> Node:
    """Expand a trailing singleton axis: [..., 1] -> [..., n]."""
    if a.value.shape[-1] != 1:
        raise ShapeError(f"repeat_last: trailing axis must be 1, got {a.value.shape}")
    out = Node(np.repeat(a.value, n, axis=-1))
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, out.grad.sum(axis=-1, keepdims=True))
        tape.record(bwd)
    return out


def sum_last(tape: Tape | None, a: Node) -> Node:
    out = Node(a.value.sum(axis=-1))
    if tape is not None:
        n = a.value.shape[-1]
        def bwd():
            if out.grad is None:
                return
            accumulate(a, np.repeat(out.grad[..., None], n, axis=-1))
        tape.record(bwd)
    return out


def sum_all(tape: Tape | None, a: Node) -> Node:
    out = Node(a.value.sum())
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            accumulate(a, np.full_like(a.value, float(out.grad)))
        tape.record(bwd)
    return out


def mean_all(tape: Tape | None, a: Node) -> Node:
    out = Node(a.value.mean())
    if tape is not None:
        inv = 1.0 / a.value.size
        def bwd():
            if out.grad is None:
                return
            accumulate(a, np.full_like(a.value, float(out.grad) * inv))
        tape.record(bwd)
    return out


def stack_scalars(tape: Tape | None, items: list[Node]) -> Node:
    """Pack scalar nodes into a 1-D vector node."""
    for it in items:
        if it.value.size != 1:
            raise ShapeError(f"stack_scalars: non-scalar operand of shape {it.value.shape}")
    out = Node(np.array([float(it.value) for it in items]))
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            for i, it in enumerate(items):
                accumulate(it, np.full_like(it.value, out.grad[i]))
        tape.record(bwd)
    return out
