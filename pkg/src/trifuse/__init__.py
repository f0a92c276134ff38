"""Trimodal person identification on embedding vectors.

Face, gesture, and voice embeddings flow through modality pathways with
confidence heads, trimodal cross-attention, gated and confidence-weighted
fusion, and a mistake-correction block, all differentiated by a small
tape-based reverse-mode engine.
"""

from .config import Config, load_config
from .data import Dataset, EmbeddingTriplet, ModalityMask, build_splits, generate, ingest
from .decision import AblationFlags, FusionState
from .model import TrimodalNet
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tape import Node, Tape
from .trainer import train

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "Config", "Dataset", "EmbeddingTriplet", "FusionState",
    "ModalityMask", "Node", "ParamStore", "Tape", "TrimodalNet",
    "build_splits", "generate", "ingest", "load_checkpoint", "load_config",
    "save_checkpoint", "train", "__version__",
]
