"""Instance-level style embedding: encoder, pooling, feature harvest, K-means catalog."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .arch import STYLE_ENCODER_ARCH, parse_arch, scale_graph
from .data import Dataset, InstanceMap, LabelMap
from .nets import build_blocks


class StyleSelectionError(ValueError):
    """A style selection refers to a missing cluster or class."""


class StyleEncoder(nn.Module):
    """Encoder-decoder producing 3 feature planes at input resolution."""

    def __init__(self, width_divisor: int = 1, arch: str = STYLE_ENCODER_ARCH):
        super().__init__()
        self.arch_string = arch
        self.width_divisor = width_divisor
        self.graph = scale_graph(parse_arch(arch), width_divisor)
        self.blocks = build_blocks(self.graph, 3)

    def raw_forward(self, image: torch.Tensor) -> torch.Tensor:
        x = image
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, image: torch.Tensor, instance_grids: torch.Tensor) -> torch.Tensor:
        return instance_average_pool(self.raw_forward(image), instance_grids)


def instance_average_pool(features: torch.Tensor, instance_grids: torch.Tensor) -> torch.Tensor:
    """Average features over each nonzero instance region and broadcast back.

    ``features`` is (N, C, H, W); ``instance_grids`` is (N, H, W) integer.
    Pixels with instance ID 0 are zeroed so inference-time conditioning
    (which has no catalog entry for the no-instance region) matches training.
    The op is linear (mean + broadcast), so gradients flow through it.
    """
    if features.shape[0] != instance_grids.shape[0] or features.shape[2:] != instance_grids.shape[1:]:
        raise ValueError(
            f"feature dims {tuple(features.shape)} do not match instance grids "
            f"{tuple(instance_grids.shape)}")
    pooled = torch.zeros_like(features)
    n, c, h, w = features.shape
    flat_feats = features.reshape(n, c, h * w)
    for i in range(n):
        ids = torch.unique(instance_grids[i])
        index = instance_grids[i].reshape(-1)
        for inst_id in ids.tolist():
            if inst_id == 0:
                continue
            mask = index == inst_id
            count = int(mask.sum())
            mean = flat_feats[i][:, mask].sum(dim=1) / count
            pooled[i] += mask.reshape(1, h, w) * mean.reshape(c, 1, 1)
    return pooled


def pooled_vectors(features: torch.Tensor, instance_grid: np.ndarray) -> dict[int, np.ndarray]:
    """Per-instance mean vectors of a (C, H, W) feature map."""
    out = {}
    feats = features.detach().cpu().numpy()
    for inst_id in np.unique(instance_grid):
        if inst_id == 0:
            continue
        mask = instance_grid == inst_id
        out[int(inst_id)] = feats[:, mask].mean(axis=1)
    return out


@dataclass
class InstanceFeature:
    sample_id: str
    instance_id: int
    class_id: int
    vector: np.ndarray  # 3 floats

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "instance_id": self.instance_id,
            "class_id": self.class_id,
            "vector": [float(v) for v in self.vector],
        }


def harvest_features(encoder: StyleEncoder, dataset: Dataset) -> list[InstanceFeature]:
    """Run the trained encoder over every instance of every image."""
    records: list[InstanceFeature] = []
    encoder.eval()
    with torch.no_grad():
        for i in range(len(dataset)):
            pair = dataset[i]
            image = torch.from_numpy(pair.image).unsqueeze(0)
            raw = encoder.raw_forward(image)[0]
            vectors = pooled_vectors(raw, pair.instance.grid)
            for inst_id, vec in sorted(vectors.items()):
                mask = pair.instance.grid == inst_id
                class_id = int(pair.label.grid[mask][0])
                records.append(InstanceFeature(
                    sample_id=pair.id, instance_id=inst_id,
                    class_id=class_id, vector=vec.astype(np.float64)))
    return records


# ---------------------------------------------------------------------------
# K-means style catalog
# ---------------------------------------------------------------------------

def lloyd_kmeans(points: np.ndarray, k: int, seed: int,
                 max_iters: int = 300, rel_tol: float = 1e-6):
    """Plain Lloyd's algorithm with k-means++ seeding.

    Returns (centers, assignment, inertia_history). Deterministic under the
    seed; inertia is non-increasing; stops when the relative inertia change
    drops below ``rel_tol``. Empty clusters keep their previous center.
    """
    n = len(points)
    if n == 0:
        raise ValueError("cannot cluster zero points")
    k = min(k, n)
    rng = np.random.Generator(np.random.PCG64(seed))

    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    for j in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]

    history = []
    prev_inertia = None
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assignment = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assignment].sum())
        history.append(inertia)
        for j in range(k):
            members = points[assignment == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        if prev_inertia is not None:
            denom = max(prev_inertia, 1e-12)
            if abs(prev_inertia - inertia) / denom < rel_tol:
                break
        prev_inertia = inertia
    return centers, assignment, history


@dataclass
class StyleCatalog:
    """Per-class cluster centers over harvested 3-dim instance features."""

    centers: dict[int, np.ndarray] = field(default_factory=dict)  # (k, 3) per class
    counts: dict[int, list[int]] = field(default_factory=dict)

    def classes(self) -> list[int]:
        return sorted(self.centers)

    def centers_for(self, class_id: int) -> np.ndarray:
        if class_id not in self.centers:
            raise StyleSelectionError(f"no style catalog entry for class {class_id}")
        return self.centers[class_id]

    def to_json(self) -> str:
        payload = {
            str(c): {
                "centers": [[float(v) for v in row] for row in self.centers[c]],
                "counts": self.counts.get(c, []),
            }
            for c in self.classes()
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StyleCatalog":
        payload = json.loads(text)
        centers, counts = {}, {}
        for key, entry in payload.items():
            centers[int(key)] = np.asarray(entry["centers"], dtype=np.float64).reshape(-1, 3)
            counts[int(key)] = [int(x) for x in entry["counts"]]
        return cls(centers=centers, counts=counts)

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "StyleCatalog":
        return cls.from_json(Path(path).read_text())


def build_style_catalog(features: list[InstanceFeature], k: int = 10,
                        seed: int = 0,
                        num_classes: int | None = None) -> StyleCatalog:
    """Cluster harvested features per class with Lloyd's K-means.

    When ``num_classes`` is given, classes that contributed no instances get
    an empty catalog entry (selectable classes stay enumerable).
    """
    by_class: dict[int, list[np.ndarray]] = {}
    for rec in features:
        by_class.setdefault(rec.class_id, []).append(rec.vector)
    catalog = StyleCatalog()
    if num_classes is not None:
        for class_id in range(num_classes):
            catalog.centers[class_id] = np.zeros((0, 3), dtype=np.float64)
            catalog.counts[class_id] = []
    for class_id in sorted(by_class):
        points = np.stack(by_class[class_id]).astype(np.float64)
        centers, assignment, _ = lloyd_kmeans(points, k, seed=seed + class_id)
        counts = [int((assignment == j).sum()) for j in range(len(centers))]
        catalog.centers[class_id] = centers
        catalog.counts[class_id] = counts
    return catalog


def sample_styles(
    catalog: StyleCatalog,
    instance: InstanceMap,
    label: LabelMap,
    selection: dict[int, object] | None = None,
    seed: int = 0,
) -> dict[int, np.ndarray]:
    """Resolve a 3-vector for every instance present in the map.

    Per-instance selections may be {"cluster": i}, {"vector": [f1,f2,f3]}, or
    "random"; instances without a selection draw a random center of their
    class under the seed.
    """
    selection = selection or {}
    rng = np.random.Generator(np.random.PCG64(seed))
    resolved: dict[int, np.ndarray] = {}
    for inst_id in instance.instance_ids():
        mask = instance.grid == inst_id
        class_id = int(label.grid[mask][0])
        choice = selection.get(inst_id, "random")
        if isinstance(choice, dict) and "vector" in choice:
            vec = np.asarray(choice["vector"], dtype=np.float64)
            if vec.shape != (3,):
                raise StyleSelectionError(
                    f"instance {inst_id}: style vector must have 3 entries")
            resolved[inst_id] = vec
            continue
        centers = catalog.centers_for(class_id)
        if len(centers) == 0:
            raise StyleSelectionError(
                f"instance {inst_id}: class {class_id} has no style centers")
        if isinstance(choice, dict) and "cluster" in choice:
            idx = int(choice["cluster"])
            if not 0 <= idx < len(centers):
                raise StyleSelectionError(
                    f"instance {inst_id}: cluster {idx} outside 0..{len(centers) - 1}")
        elif choice == "random":
            idx = int(rng.integers(len(centers)))
        else:
            raise StyleSelectionError(
                f"instance {inst_id}: unrecognized selection {choice!r}")
        resolved[inst_id] = centers[idx].copy()
    return resolved
