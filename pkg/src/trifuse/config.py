"""Run configuration: dataclasses, JSON round-trip, and validation.

Every interpretation the model makes of an underspecified choice lives
here as an inspectable key with a default.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

MODALITIES = ("face", "gesture", "voice")
DEFAULT_INPUT_DIMS = {"face": 512, "gesture": 768, "voice": 256}


class ConfigError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _modality_map(value, what: str) -> dict[str, float]:
    _require(isinstance(value, dict), f"{what} must be a mapping of modality -> value")
    _require(set(value) == set(MODALITIES), f"{what} must have exactly keys {MODALITIES}")
    out = {}
    for k, v in value.items():
        _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{what}.{k} must be a number")
        _require(v >= 0, f"{what}.{k} must be >= 0")
        out[k] = float(v)
    return out


@dataclass
class ModelConfig:
    num_classes: int = 50
    input_dims: dict = field(default_factory=lambda: dict(DEFAULT_INPUT_DIMS))
    feature_dim: int = 320        # per-modality refined width; concat is 3x this
    tokens: int = 8               # attention splits each feature into this many tokens
    dense_hidden: int = 512
    conf_hidden: int = 64
    gate_hidden: int = 256
    fusion_hidden: int = 512
    corr_hidden: int = 128
    fusion_dropout: float = 0.1
    correction_weight: float = 0.2

    def validate(self) -> None:
        _require(self.num_classes >= 2, "model.num_classes must be >= 2")
        _require(set(self.input_dims) == set(MODALITIES),
                 f"model.input_dims must have exactly keys {MODALITIES}")
        for m, d in self.input_dims.items():
            _require(isinstance(d, int) and d >= 1, f"model.input_dims.{m} must be a positive int")
        for name in ("feature_dim", "tokens", "dense_hidden", "conf_hidden",
                     "gate_hidden", "fusion_hidden", "corr_hidden"):
            _require(isinstance(getattr(self, name), int) and getattr(self, name) >= 1,
                     f"model.{name} must be a positive int")
        _require(self.feature_dim % self.tokens == 0,
                 f"model.feature_dim ({self.feature_dim}) must be divisible by "
                 f"model.tokens ({self.tokens})")
        _require(0.0 <= self.fusion_dropout < 1.0, "model.fusion_dropout must be in [0, 1)")

    @property
    def token_dim(self) -> int:
        return self.feature_dim // self.tokens

    @property
    def concat_dim(self) -> int:
        return 3 * self.feature_dim


@dataclass
class SyntheticConfig:
    num_identities: int = 50
    single_session_fraction: float = 0.5
    max_sessions: int = 3
    train_per_identity: int = 40
    val_per_identity: int = 10
    test_per_identity: int = 10
    # Embeddings live on a low-dimensional latent subspace (rank 0 = isotropic
    # full-rank; see decisions notes: full-rank Gaussians never confuse a
    # nearest-centroid classifier at these dims, so no session effect shows).
    latent_rank: int = 32
    noise_std: dict = field(default_factory=lambda: {"face": 0.4, "gesture": 0.4, "voice": 0.4})
    drift_std: dict = field(default_factory=lambda: {"face": 0.4, "gesture": 1.2, "voice": 0.4})
    unit_norm: bool = False
    seed: int = 0

    def validate(self) -> None:
        _require(self.num_identities >= 2, "data.num_identities must be >= 2")
        _require(0.0 <= self.single_session_fraction <= 1.0,
                 "data.single_session_fraction must be in [0, 1]")
        _require(self.max_sessions >= 1, "data.max_sessions must be >= 1")
        for name in ("train_per_identity", "val_per_identity", "test_per_identity"):
            _require(getattr(self, name) >= 1, f"data.{name} must be >= 1")
        _require(self.latent_rank >= 0, "data.latent_rank must be >= 0")
        self.noise_std = _modality_map(self.noise_std, "data.noise_std")
        self.drift_std = _modality_map(self.drift_std, "data.drift_std")


@dataclass
class AugmentConfig:
    enabled: bool = True
    noise_std: float = 0.05       # relative to per-modality feature scale
    dropout_rate: float = 0.2
    mask_prob: float = 0.2
    mask_granularity: str = "batch"   # or "sample"
    mixup: bool = True
    mixup_alpha: float = 0.2

    def validate(self) -> None:
        _require(self.noise_std >= 0, "augment.noise_std must be >= 0")
        _require(0.0 <= self.dropout_rate < 1.0, "augment.dropout_rate must be in [0, 1)")
        _require(0.0 <= self.mask_prob <= 1.0, "augment.mask_prob must be in [0, 1]")
        _require(self.mask_granularity in ("batch", "sample"),
                 "augment.mask_granularity must be 'batch' or 'sample'")
        _require(self.mixup_alpha > 0, "augment.mixup_alpha must be > 0")


LOSS_HEADS = ("face", "gesture", "voice", "fusion", "ensemble", "final")


@dataclass
class LossConfig:
    focal_gamma: float = 2.0
    label_smoothing: float = 0.1
    loss_heads: list = field(default_factory=lambda: list(LOSS_HEADS))

    def validate(self) -> None:
        _require(self.focal_gamma >= 0, "loss.focal_gamma must be >= 0")
        _require(0.0 <= self.label_smoothing < 1.0, "loss.label_smoothing must be in [0, 1)")
        _require(len(self.loss_heads) >= 1, "loss.loss_heads must not be empty")
        for h in self.loss_heads:
            _require(h in LOSS_HEADS, f"loss.loss_heads: unknown head {h!r}, valid: {LOSS_HEADS}")
        _require(len(set(self.loss_heads)) == len(self.loss_heads),
                 "loss.loss_heads must not repeat")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    peak_lr: float = 1e-3
    floor_lr: float = 1e-5
    warmup_fraction: float = 0.05
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0    # null disables clipping
    curriculum: str = "clean-to-hard"    # or "uniform"
    curriculum_ramp_epochs: int = 10
    eval_batch: int = 512

    def validate(self) -> None:
        _require(self.batch_size >= 1, "train.batch_size must be >= 1")
        _require(self.epochs >= 1, "train.epochs must be >= 1")
        _require(self.peak_lr > 0, "train.peak_lr must be > 0")
        _require(0 <= self.floor_lr <= self.peak_lr, "train.floor_lr must be in [0, peak_lr]")
        _require(0.0 <= self.warmup_fraction < 1.0, "train.warmup_fraction must be in [0, 1)")
        _require(self.weight_decay >= 0, "train.weight_decay must be >= 0")
        _require(0 < self.beta1 < 1 and 0 < self.beta2 < 1, "train.beta1/beta2 must be in (0, 1)")
        _require(self.clip_norm is None or self.clip_norm > 0,
                 "train.clip_norm must be > 0 or null")
        _require(self.curriculum in ("clean-to-hard", "uniform"),
                 "train.curriculum must be 'clean-to-hard' or 'uniform'")
        _require(self.curriculum_ramp_epochs >= 1, "train.curriculum_ramp_epochs must be >= 1")
        _require(self.eval_batch >= 1, "train.eval_batch must be >= 1")


@dataclass
class Config:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        _require(isinstance(self.seed, int), "seed must be an int")
        self.model.validate()
        self.data.validate()
        self.augment.validate()
        self.loss.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {"model": ModelConfig, "data": SyntheticConfig, "augment": AugmentConfig,
             "loss": LossConfig, "train": TrainConfig}


def _build_section(cls, payload: dict, path: str):
    _require(isinstance(payload, dict), f"config section {path!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    _require(not unknown, f"unknown config key(s) under {path!r}: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(payload: dict) -> Config:
    _require(isinstance(payload, dict), "config root must be a JSON object")
    known = {f.name for f in fields(Config)}
    unknown = set(payload) - known
    _require(not unknown, f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    if "seed" in payload:
        _require(isinstance(payload["seed"], int) and not isinstance(payload["seed"], bool),
                 "seed must be an int")
        kwargs["seed"] = payload["seed"]
    for name, cls in _SECTIONS.items():
        if name in payload:
            kwargs[name] = _build_section(cls, payload[name], name)
    cfg = Config(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | None) -> Config:
    """Load a JSON config file; TRIFUSE_SEED in the environment overrides seed."""
    if path is None:
        cfg = Config()
    else:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        cfg = config_from_dict(payload)
    env_seed = os.environ.get("TRIFUSE_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"TRIFUSE_SEED must be an integer, got {env_seed!r}")
    cfg.validate()
    return cfg
