"""On-disk feature stores and model bundles (both use the T4PD container)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .feature_pipeline import FeaturePipelineState, state_entries, state_from_entries
from .model import ModelParams, config_from_json, config_to_json, param_shapes


@dataclass
class FeatureStore:
    X: np.ndarray  # [n_windows, F]
    labels: np.ndarray  # class ids into `classes`
    classes: list[str]
    source_ids: list[str]
    offsets: np.ndarray
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        container.save(path, "features", {
            "features": self.X,
            "labels": self.labels.astype(np.int64),
            "offsets": self.offsets.astype(np.int64),
            "classes": json.dumps(self.classes),
            "source_ids": json.dumps(self.source_ids),
            "meta": json.dumps(self.meta, sort_keys=True),
        })

    @classmethod
    def load(cls, path: str | Path) -> "FeatureStore":
        e = container.load(path, expect_kind="features")
        return cls(e["features"], e["labels"], json.loads(e["classes"]), json.loads(e["source_ids"]),
                   e["offsets"], json.loads(e["meta"]))

    def class_counts(self) -> dict[str, int]:
        return {c: int((self.labels == i).sum()) for i, c in enumerate(self.classes)}


@dataclass
class Bundle:
    """Everything needed for inference: pipeline state, model, class table."""

    state: FeaturePipelineState
    model: ModelParams
    classes: list[str]
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        entries = state_entries(self.state)
        entries["model.config"] = config_to_json(self.model.config)
        for name, arr in self.model.params.items():
            entries["model.param." + name] = arr
        entries["classes"] = json.dumps(self.classes)
        entries["meta"] = json.dumps(self.meta, sort_keys=True)
        container.save(path, "bundle", entries)

    @classmethod
    def load(cls, path: str | Path) -> "Bundle":
        e = container.load(path, expect_kind="bundle")
        cfg = config_from_json(e["model.config"])
        params = {name: e["model.param." + name] for name in param_shapes(cfg)}
        for name, shape in param_shapes(cfg).items():
            if params[name].shape != shape:
                raise container.ContainerError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        return cls(state_from_entries(e), ModelParams(cfg, params), json.loads(e["classes"]), json.loads(e["meta"]))
