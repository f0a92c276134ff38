"""Evaluation harness: Top-k accuracy over the seven modality-availability
conditions, same-session vs cross-session breakdown, and the ablation ladder."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import MODALITIES
from .data import ALL_MASKS, Dataset, ModalityMask
from .decision import AblationFlags
from .model import TrimodalNet

REPORT_SCHEMA_VERSION = 1

GROUPS = ("overall", "single_session", "multi_session")


def topk_accuracy(rankings: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of samples whose true label is among the first k ranked ids."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rankings = np.atleast_2d(rankings)
    labels = np.asarray(labels)
    if len(rankings) != len(labels):
        raise ValueError(f"{len(rankings)} rankings vs {len(labels)} labels")
    if len(labels) == 0:
        return float("nan")
    return float((rankings[:, :k] == labels[:, None]).any(axis=1).mean())


@dataclass
class CellStats:
    top1: float
    top5: float
    count: int

    def to_dict(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "count": self.count}


@dataclass
class EvalReport:
    """Accuracy per (mask x session group), plus the run's provenance."""
    conditions: dict[str, dict[str, CellStats]]
    ablation: list[str] = field(default_factory=list)
    config_hash: str = ""
    schema_version: int = REPORT_SCHEMA_VERSION

    def cell(self, mask_name: str, group: str = "overall") -> CellStats:
        return self.conditions[mask_name][group]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "ablation": list(self.ablation),
            "conditions": {m: {g: c.to_dict() for g, c in groups.items()}
                           for m, groups in self.conditions.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        conditions = {
            m: {g: CellStats(**c) for g, c in groups.items()}
            for m, groups in payload["conditions"].items()
        }
        return cls(conditions=conditions, ablation=payload.get("ablation", []),
                   config_hash=payload.get("config_hash", ""),
                   schema_version=payload.get("schema_version", REPORT_SCHEMA_VERSION))

    def format_table(self) -> str:
        """Percentages to two decimals, one mask per column."""
        masks = [m.name for m in ALL_MASKS if m.name in self.conditions]
        width = max(len(m) for m in masks) + 2
        lines = []
        header = "condition".ljust(16) + "".join(m.rjust(width) for m in masks)
        for metric in ("top1", "top5"):
            lines.append(f"-- {metric} (%) --")
            lines.append(header)
            for group in GROUPS:
                if not any(group in self.conditions[m] for m in masks):
                    continue
                row = group.ljust(16)
                for m in masks:
                    cell = self.conditions[m].get(group)
                    val = getattr(cell, metric) if cell else float("nan")
                    row += (f"{100.0 * val:.2f}" if val == val else "--").rjust(width)
                lines.append(row)
        if self.ablation:
            lines.append(f"ablation: {','.join(self.ablation)}")
        return "\n".join(lines)


def eval_matrix(model: TrimodalNet, test_set: Dataset, multi_ids: set[int],
                ablation: AblationFlags | None = None,
                masks: tuple[ModalityMask, ...] = ALL_MASKS,
                batch: int = 512, config_hash: str = "") -> EvalReport:
    """Zero absent modalities per mask, rank by final logits, and aggregate
    Top-1/Top-5 overall and split by multi-session speaker membership."""
    if len(test_set) == 0:
        raise ValueError("empty test set")
    labels = test_set.identity
    is_multi = np.asarray([int(i) in multi_ids for i in labels])
    arrays = {m: test_set.modality(m) for m in MODALITIES}
    ab = ablation or AblationFlags()

    conditions: dict[str, dict[str, CellStats]] = {}
    for mask in masks:
        rank_rows = []
        for start in range(0, len(labels), batch):
            sl = slice(start, min(start + batch, len(labels)))
            _, ranks = model.predict(arrays["face"][sl], arrays["gesture"][sl],
                                     arrays["voice"][sl], mask=mask, ablation=ab)
            rank_rows.append(ranks)
        rankings = np.concatenate(rank_rows)
        groups = {}
        for group, sel in (("overall", np.ones(len(labels), dtype=bool)),
                           ("single_session", ~is_multi), ("multi_session", is_multi)):
            if sel.any():
                groups[group] = CellStats(
                    top1=topk_accuracy(rankings[sel], labels[sel], 1),
                    top5=topk_accuracy(rankings[sel], labels[sel], 5),
                    count=int(sel.sum()),
                )
            else:
                groups[group] = CellStats(top1=float("nan"), top5=float("nan"), count=0)
        conditions[mask.name] = groups
    return EvalReport(conditions=conditions, ablation=ab.active(),
                      config_hash=config_hash)


LADDER_ORDER = ("no_correction", "no_cross_attention", "no_gated_fusion",
                "no_confidence", "no_augmentation")


def ablation_ladder(run_fn: Callable[[AblationFlags], EvalReport],
                    order: tuple[str, ...] = LADDER_ORDER,
                    mode: str = "cumulative") -> list[tuple[str, EvalReport]]:
    """Train+evaluate the bypass sequence. 'cumulative' removes modules in
    order on top of one another; 'single' removes one at a time from the
    full model. The first row is always the full model."""
    if mode not in ("cumulative", "single"):
        raise ValueError(f"mode must be 'cumulative' or 'single', got {mode!r}")
    rows: list[tuple[str, EvalReport]] = [("full", run_fn(AblationFlags()))]
    removed: list[str] = []
    for flag in order:
        if mode == "cumulative":
            removed.append(flag)
            flags = AblationFlags.from_names(removed)
        else:
            flags = AblationFlags.from_names([flag])
        rows.append((f"w/o {flag.removeprefix('no_')}", run_fn(flags)))
    return rows


def format_ladder(rows: list[tuple[str, EvalReport]]) -> str:
    masks = [m.name for m in ALL_MASKS]
    width = max(len(m) for m in masks) + 2
    lines = ["setting".ljust(24) + "".join(m.rjust(width) for m in masks)
             + "delta_top1".rjust(12)]
    full_tri = rows[0][1].cell("trimodal").top1
    prev_tri = full_tri
    for label, report in rows:
        row = label.ljust(24)
        for m in masks:
            row += f"{100.0 * report.cell(m).top1:.2f}".rjust(width)
        tri = report.cell("trimodal").top1
        delta = "--" if label == "full" else f"{100.0 * (tri - prev_tri):+.2f}"
        row += delta.rjust(12)
        prev_tri = tri
        lines.append(row)
    return "\n".join(lines)
