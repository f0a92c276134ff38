"""Synthetic multimodal identity data with a session model, split
construction under the session rules, and the binary embedding format."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import MODALITIES, DEFAULT_INPUT_DIMS, SyntheticConfig

DATA_FORMAT_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ModalityMask:
    """Which modalities are present; absent ones are zero vectors."""
    face: bool = True
    gesture: bool = True
    voice: bool = True

    def present(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if getattr(self, m))

    def count(self) -> int:
        return len(self.present())

    @property
    def name(self) -> str:
        present = self.present()
        if len(present) == 3:
            return "trimodal"
        return "+".join(present)

    @classmethod
    def from_names(cls, names) -> "ModalityMask":
        names = list(names)
        for n in names:
            if n not in MODALITIES:
                raise ValueError(f"unknown modality {n!r}, valid: {MODALITIES}")
        return cls(**{m: m in names for m in MODALITIES})


ALL_MASKS = tuple(
    ModalityMask(face=f, gesture=g, voice=v)
    for f, g, v in [(True, False, False), (False, True, False), (False, False, True),
                    (True, True, False), (True, False, True), (False, True, True),
                    (True, True, True)]
)
FULL_MASK = ModalityMask()


@dataclass
class EmbeddingTriplet:
    face: np.ndarray
    gesture: np.ndarray
    voice: np.ndarray
    identity: int
    session: int
    mask: ModalityMask = field(default_factory=ModalityMask)

    def modality(self, name: str) -> np.ndarray:
        return getattr(self, name)


class Dataset:
    """Column-wise sample storage: one array per modality plus labels."""

    def __init__(self, face, gesture, voice, identity, session, num_identities,
                 dims=None):
        self.face = np.asarray(face, dtype=np.float64)
        self.gesture = np.asarray(gesture, dtype=np.float64)
        self.voice = np.asarray(voice, dtype=np.float64)
        self.identity = np.asarray(identity, dtype=np.int64)
        self.session = np.asarray(session, dtype=np.int64)
        self.num_identities = int(num_identities)
        self.dims = dict(dims) if dims else {m: getattr(self, m).shape[1] for m in MODALITIES}
        n = len(self.identity)
        for m in MODALITIES:
            arr = getattr(self, m)
            if arr.shape != (n, self.dims[m]):
                raise DataError(f"{m} array has shape {arr.shape}, expected ({n}, {self.dims[m]})")
        if self.session.shape != (n,):
            raise DataError("session array length mismatch")
        if n and (self.identity.min() < 0 or self.identity.max() >= self.num_identities):
            raise DataError("identity labels out of range")

    def __len__(self) -> int:
        return len(self.identity)

    def __getitem__(self, i: int) -> EmbeddingTriplet:
        return EmbeddingTriplet(face=self.face[i], gesture=self.gesture[i],
                                voice=self.voice[i], identity=int(self.identity[i]),
                                session=int(self.session[i]))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.face[idx], self.gesture[idx], self.voice[idx],
                       self.identity[idx], self.session[idx], self.num_identities,
                       self.dims)

    def modality(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def sessions_per_identity(self) -> dict[int, list[int]]:
        table: dict[int, set[int]] = {}
        for ident, sess in zip(self.identity, self.session):
            table.setdefault(int(ident), set()).add(int(sess))
        return {k: sorted(v) for k, v in sorted(table.items())}


@dataclass
class SplitManifest:
    """Per-identity session assignments and global sample indices per split."""
    train: dict[int, list[int]]
    val: dict[int, list[int]]
    test: dict[int, list[int]]
    sessions: dict[int, dict[str, list[int]]]   # identity -> split -> session ids

    def indices(self, split: str) -> np.ndarray:
        table = getattr(self, split)
        out: list[int] = []
        for ident in sorted(table):
            out.extend(table[ident])
        return np.asarray(out, dtype=np.int64)


def _latent_mixing(rng: np.random.Generator, dim: int, rank: int) -> np.ndarray:
    a = rng.normal(size=(dim, rank))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    return a


def _session_counts(cfg: SyntheticConfig, n_sessions: int) -> list[int]:
    """Samples per session, laid out so the session rules later yield the
    configured per-identity train/val/test counts."""
    t, v, s = cfg.train_per_identity, cfg.val_per_identity, cfg.test_per_identity
    if n_sessions == 1:
        return [t + v + s]
    if n_sessions == 2:
        return [t + v, s]
    # three or more: the train quota is shared across the train sessions
    n_train_sessions = n_sessions - 2
    base = t // n_train_sessions
    train_counts = [base] * n_train_sessions
    train_counts[0] += t - base * n_train_sessions
    return train_counts + [v, s]


def generate(cfg: SyntheticConfig) -> Dataset:
    """Sample identities as latent prototypes, sessions as latent offsets, and
    samples as prototype + offset + noise, mapped through a fixed per-modality
    mixing with unit rows (per-dimension marginals stay standard normal)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dims = dict(DEFAULT_INPUT_DIMS)
    rank = cfg.latent_rank if cfg.latent_rank > 0 else None
    mixing = {m: _latent_mixing(rng, dims[m], rank) if rank else None for m in MODALITIES}

    n_single = int(round(cfg.num_identities * cfg.single_session_fraction))
    columns = {m: [] for m in MODALITIES}
    identities: list[int] = []
    sessions: list[int] = []
    next_session = 0
    for ident in range(cfg.num_identities):
        if ident < n_single or cfg.max_sessions == 1:
            n_sessions = 1
        else:
            n_sessions = int(rng.integers(2, cfg.max_sessions + 1))
        counts = _session_counts(cfg, n_sessions)
        protos = {}
        for m in MODALITIES:
            latent = rng.normal(size=rank) if rank else rng.normal(size=dims[m])
            protos[m] = latent
        for count in counts:
            for m in MODALITIES:
                r = rank if rank else dims[m]
                delta = rng.normal(scale=cfg.drift_std[m], size=r)
                eps = rng.normal(scale=cfg.noise_std[m], size=(count, r))
                latent_samples = protos[m] + delta + eps
                x = latent_samples @ mixing[m].T if rank else latent_samples
                if cfg.unit_norm:
                    x = x / np.linalg.norm(x, axis=1, keepdims=True)
                columns[m].append(x)
            identities.extend([ident] * count)
            sessions.extend([next_session] * count)
            next_session += 1
    return Dataset(
        face=np.concatenate(columns["face"]),
        gesture=np.concatenate(columns["gesture"]),
        voice=np.concatenate(columns["voice"]),
        identity=identities, session=sessions,
        num_identities=cfg.num_identities, dims=dims,
    )


def build_splits(dataset: Dataset, val_fraction: float = 1.0 / 6.0,
                 test_fraction: float = 1.0 / 6.0) -> SplitManifest:
    """Assign sessions to splits per the session rules: a lone session is
    shared across all three splits (samples partitioned); with two sessions
    the last is the test session; with three or more, the last two become
    test and validation and the rest train."""
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    by_identity: dict[int, dict[int, list[int]]] = {}
    for i, (ident, sess) in enumerate(zip(dataset.identity, dataset.session)):
        by_identity.setdefault(int(ident), {}).setdefault(int(sess), []).append(i)
    for ident in range(dataset.num_identities):
        if ident not in by_identity:
            raise DataError(f"identity {ident} has zero samples")

    train: dict[int, list[int]] = {}
    val: dict[int, list[int]] = {}
    test: dict[int, list[int]] = {}
    sessions: dict[int, dict[str, list[int]]] = {}
    for ident, sess_map in sorted(by_identity.items()):
        sess_ids = sorted(sess_map)
        if len(sess_ids) == 1:
            sid = sess_ids[0]
            idx = sess_map[sid]
            n = len(idx)
            n_test = max(1, int(round(n * test_fraction))) if n >= 3 else 0
            n_val = max(1, int(round(n * val_fraction))) if n >= 3 else 0
            n_train = n - n_val - n_test
            train[ident] = idx[:n_train]
            val[ident] = idx[n_train:n_train + n_val]
            test[ident] = idx[n_train + n_val:]
            sessions[ident] = {"train": [sid], "val": [sid], "test": [sid]}
        elif len(sess_ids) == 2:
            trainval_sid, test_sid = sess_ids
            idx = sess_map[trainval_sid]
            n_val = max(1, int(round(len(idx) * val_fraction / (1.0 - test_fraction))))
            train[ident] = idx[:-n_val]
            val[ident] = idx[-n_val:]
            test[ident] = sess_map[test_sid]
            sessions[ident] = {"train": [trainval_sid], "val": [trainval_sid],
                               "test": [test_sid]}
        else:
            *train_sids, val_sid, test_sid = sess_ids
            train[ident] = [i for sid in train_sids for i in sess_map[sid]]
            val[ident] = sess_map[val_sid]
            test[ident] = sess_map[test_sid]
            sessions[ident] = {"train": train_sids, "val": [val_sid], "test": [test_sid]}
    return SplitManifest(train=train, val=val, test=test, sessions=sessions)


def verify_no_leak(dataset: Dataset, manifest: SplitManifest) -> None:
    """Exhaustive scan: no sample index in two splits, and for multi-session
    identities no test session appears in train or validation."""
    seen: dict[int, str] = {}
    for split in ("train", "val", "test"):
        for ident, idx in getattr(manifest, split).items():
            for i in idx:
                if i in seen:
                    raise DataError(
                        f"sample {i} of identity {ident} in both {seen[i]} and {split}"
                    )
                seen[i] = split
    for ident, sess in manifest.sessions.items():
        all_sessions = set(sess["train"]) | set(sess["val"]) | set(sess["test"])
        if len(all_sessions) == 1:
            continue
        overlap = set(sess["test"]) & (set(sess["train"]) | set(sess["val"]))
        if overlap:
            raise DataError(f"identity {ident}: test session(s) {sorted(overlap)} leak into train/val")


# ---------------------------------------------------------------------------
# on-disk format: per-split binary records plus a JSON sidecar manifest

def _write_record(fh, triplet_arrays, identity: int, session: int) -> None:
    fh.write(struct.pack("<II", identity, session))
    for arr in triplet_arrays:
        vec = np.asarray(arr, dtype="<f4")
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())


def write_dataset(dataset: Dataset, manifest: SplitManifest, out_dir: str,
                  extra_meta: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    counts = {}
    for split in ("train", "val", "test"):
        idx = manifest.indices(split)
        counts[split] = int(len(idx))
        with open(os.path.join(out_dir, f"{split}.bin"), "wb") as fh:
            for i in idx:
                _write_record(fh, (dataset.face[i], dataset.gesture[i], dataset.voice[i]),
                              int(dataset.identity[i]), int(dataset.session[i]))
    meta = {
        "format_version": DATA_FORMAT_VERSION,
        "dims": dataset.dims,
        "num_identities": dataset.num_identities,
        "counts": counts,
        "files": {split: f"{split}.bin" for split in ("train", "val", "test")},
        "sessions_per_identity": {str(k): v for k, v in dataset.sessions_per_identity().items()},
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def read_manifest(data_dir: str) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json under {data_dir}")
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}")
    if meta.get("format_version") != DATA_FORMAT_VERSION:
        raise DataError(f"manifest format version {meta.get('format_version')}, "
                        f"expected {DATA_FORMAT_VERSION}")
    return meta


def ingest(data_dir: str, split: str, meta: dict | None = None) -> Dataset:
    """Read one split's records, validating dimensions and label ranges."""
    if meta is None:
        meta = read_manifest(data_dir)
    dims = meta["dims"]
    num_identities = meta["num_identities"]
    path = os.path.join(data_dir, meta["files"][split])
    columns = {m: [] for m in MODALITIES}
    identities, sessions = [], []
    with open(path, "rb") as fh:
        record = 0
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) < 8:
                raise DataError(f"{path}: truncated header in record {record}")
            ident, sess = struct.unpack("<II", head)
            if ident >= num_identities:
                raise DataError(f"{path}: record {record} has unknown identity {ident} "
                                f"(manifest declares {num_identities})")
            for m in MODALITIES:
                lenbuf = fh.read(4)
                if len(lenbuf) < 4:
                    raise DataError(f"{path}: truncated length prefix in record {record}")
                (n,) = struct.unpack("<I", lenbuf)
                if n != dims[m]:
                    raise DataError(f"{path}: record {record} {m} has {n} dims, "
                                    f"manifest declares {dims[m]}")
                payload = fh.read(4 * n)
                if len(payload) < 4 * n:
                    raise DataError(f"{path}: truncated {m} payload in record {record}")
                columns[m].append(np.frombuffer(payload, dtype="<f4").astype(np.float64))
            identities.append(ident)
            sessions.append(sess)
            record += 1
    if not identities:
        raise DataError(f"{path}: no records")
    return Dataset(
        face=np.stack(columns["face"]), gesture=np.stack(columns["gesture"]),
        voice=np.stack(columns["voice"]), identity=identities, session=sessions,
        num_identities=num_identities, dims=dims,
    )


def multi_session_identities(meta: dict) -> set[int]:
    return {int(k) for k, v in meta["sessions_per_identity"].items() if len(v) > 1}
