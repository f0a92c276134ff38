"""Tape-based reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    """Raised on tape misuse (double backward, non-scalar loss)."""


class Node:
    """A float64 array together with a gradient buffer.

    Gradient buffers of intermediate nodes are allocated lazily during
    backward; parameter nodes keep a persistent buffer (see ParamStore).
    """

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape})"


def accumulate(node: Node, g: np.ndarray) -> None:
    """Add a gradient contribution to a node, allocating on first use."""
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


class Tape:
    """Ordered record of executed differentiable operations.

    Each op appends a closure computing its vector-Jacobian product.
    backward() walks the record in exact reverse execution order.
    ``min_relu_gap`` tracks the smallest |preactivation| any relu saw,
    so gradient checks can reject forwards sitting too close to a kink.
    """

    def __init__(self):
        self._steps: list = []
        self._used = False
        self.min_relu_gap: float = np.inf

    def __len__(self) -> int:
        return len(self._steps)

    def record(self, step) -> None:
        self._steps.append(step)

    def backward(self, loss: Node) -> None:
        if self._used:
            raise TapeError(
                "backward already ran on this tape; run a new forward pass first"
            )
        if loss.value.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.value.shape}")
        self._used = True
        loss.grad = np.ones_like(loss.value)
        for step in reversed(self._steps):
            step()
