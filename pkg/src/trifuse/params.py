"""Named parameter storage, initialization, and checkpoint files."""

from __future__ import annotations

import hashlib
import json
from typing import Iterator

import numpy as np

from .tape import Node

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ParamStore:
    """Named parameters, each paired with one persistent gradient buffer."""

    def __init__(self):
        self._nodes: dict[str, Node] = {}

    def register(self, name: str, value: np.ndarray) -> Node:
        if name in self._nodes:
            raise ValueError(f"duplicate parameter name: {name!r}")
        node = Node(value)
        node.grad = np.zeros_like(node.value)
        self._nodes[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def names(self) -> list[str]:
        return list(self._nodes)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._nodes.items())

    def num_values(self) -> int:
        return sum(n.value.size for n in self._nodes.values())

    def zero_grad(self) -> None:
        for node in self._nodes.values():
            node.grad.fill(0.0)

    def grad_norm(self) -> float:
        total = 0.0
        for node in self._nodes.values():
            total += float(np.sum(node.grad * node.grad))
        return float(np.sqrt(total))

    def scale_grads(self, factor: float) -> None:
        for node in self._nodes.values():
            node.grad *= factor

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._nodes.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self._nodes)
        got = set(state)
        if expected - got:
            raise CheckpointError(f"missing parameters: {sorted(expected - got)}")
        if got - expected:
            raise CheckpointError(f"unexpected parameters: {sorted(got - expected)}")
        for name, node in self._nodes.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != node.value.shape:
                raise CheckpointError(
                    f"parameter {name!r}: shape {arr.shape} in file, expected {node.value.shape}"
                )
            node.value[...] = arr


def name_seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-parameter generator keyed by (seed, name)."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()[:8]
    return np.random.default_rng(int.from_bytes(digest, "little"))


def init_dense(store: ParamStore, name: str, out_dim: int, in_dim: int, seed: int) -> None:
    """Register weight+bias for a dense layer: uniform fan-in weights, zero bias."""
    rng = name_seeded_rng(seed, name)
    limit = 1.0 / np.sqrt(in_dim)
    store.register(f"{name}.W", rng.uniform(-limit, limit, size=(out_dim, in_dim)))
    store.register(f"{name}.b", np.zeros(out_dim))


def save_checkpoint(store: ParamStore, path: str, config_json: str | None = None) -> None:
    arrays: dict[str, np.ndarray] = {
        "__format_version__": np.array(CHECKPOINT_FORMAT_VERSION, dtype=np.int64)
    }
    if config_json is not None:
        arrays["__config_json__"] = np.array(config_json)
    for name, node in store.items():
        arrays[name] = node.value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path: str) -> tuple[dict[str, np.ndarray], str | None]:
    """Return (name -> values, embedded config JSON or None)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            contents = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc
    version = contents.pop("__format_version__", None)
    if version is None:
        raise CheckpointError(f"{path!r} has no format-version field")
    if int(version) != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path!r}: format version {int(version)}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    cfg = contents.pop("__config_json__", None)
    config_json = str(cfg) if cfg is not None else None
    return contents, config_json


def load_checkpoint(store: ParamStore, path: str) -> str | None:
    """Load values into an existing store, validating every name and shape."""
    state, config_json = read_checkpoint(path)
    store.load_state_dict(state)
    return config_json


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
