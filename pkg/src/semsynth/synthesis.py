"""Inference-time synthesis from label/instance maps with optional style control."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import (
    InstanceMap,
    LabelMap,
    ShapeError,
    build_conditioning,
    downsample_nearest,
)
from .encoder import StyleCatalog, sample_styles
from .training import Models, TrainConfig, load_bundle, models_from_bundle


@dataclass
class SynthesisEngine:
    """A loaded model bundle plus optional style catalog, ready to synthesize."""

    models: Models
    config: TrainConfig
    catalog: StyleCatalog | None = None

    @classmethod
    def from_bundle(cls, bundle_path: str | Path,
                    catalog_path: str | Path | None = None) -> "SynthesisEngine":
        models, config = models_from_bundle(load_bundle(bundle_path))
        for net in models.named_networks().values():
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
        catalog = StyleCatalog.load(catalog_path) if catalog_path else None
        return cls(models=models, config=config, catalog=catalog)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def uses_styles(self) -> bool:
        return self.config.use_encoder

    def resolve_styles(self, label: LabelMap, instance: InstanceMap,
                       selection: dict[int, object] | None = None,
                       seed: int = 0) -> dict[int, np.ndarray]:
        """Per-instance 3-vectors from the catalog (empty when styles unused)."""
        if not self.uses_styles:
            return {}
        if self.catalog is None:
            raise ValueError("this model uses style features but no catalog is loaded")
        return sample_styles(self.catalog, instance, label, selection, seed=seed)

    def _cond(self, label_grid: np.ndarray, inst_grid: np.ndarray,
              styles: dict[int, np.ndarray] | None) -> torch.Tensor:
        label = LabelMap(grid=label_grid, num_classes=self.num_classes)
        instance = InstanceMap(grid=inst_grid)
        features = styles if self.uses_styles else None
        cond = build_conditioning(label, instance, features)
        return torch.from_numpy(cond.planes).unsqueeze(0)

    def synthesize(self, label: LabelMap, instance: InstanceMap,
                   styles: dict[int, np.ndarray] | None = None) -> np.ndarray:
        """Render an image (3, H, W) float32 in [-1, 1] for the given maps."""
        if label.grid.shape != instance.grid.shape:
            raise ShapeError("label and instance dimensions disagree")
        if label.height % 32 or label.width % 32:
            raise ShapeError(
                f"dims {label.height}x{label.width} must be divisible by 32")
        if self.uses_styles and styles is None:
            styles = self.resolve_styles(label, instance)
        cond_full = self._cond(label.grid, instance.grid, styles)
        with torch.no_grad():
            if self.config.generator_mode == "composed":
                label_h = downsample_nearest(label.grid, 2)
                inst_h = downsample_nearest(instance.grid, 2)
                cond_half = self._cond(label_h, inst_h, styles)
                image = self.models.gen.composed_forward(cond_full, cond_half)
            else:
                image, _ = self.models.gen.g1_forward(cond_full)
        return image[0].numpy()
