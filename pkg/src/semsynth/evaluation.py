"""Segmentation-score evaluation: oracle segmenter, metrics, model comparison.

The oracle is a small convolutional segmenter trained on real shapes-world
images; once frozen it plays the role of the off-the-shelf segmentation model
in the quantitative protocol and doubles as the perceptual-loss feature
extractor.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import Dataset, LabelMap, iterate_batches
from .synthesis import SynthesisEngine
from .training import (
    BundleIntegrityError,
    ModelBundle,
    load_bundle,
    save_bundle,
)

ORACLE_WIDTHS = (24, 32, 48, 64, 64)
ORACLE_STRIDES = (1, 2, 1, 2, 1)


class OracleSegmenter(nn.Module):
    """Five conv blocks and a 1x1 head; logits are upsampled to input size."""

    def __init__(self, num_classes: int, widths=ORACLE_WIDTHS, strides=ORACLE_STRIDES):
        super().__init__()
        self.num_classes = num_classes
        self.widths = tuple(widths)
        self.strides = tuple(strides)
        blocks = []
        in_ch = 3
        for w, s in zip(widths, strides):
            blocks.append(nn.Sequential(
                nn.Conv2d(in_ch, w, 3, stride=s, padding=1),
                nn.InstanceNorm2d(w, affine=True),
                nn.ReLU(inplace=True),
            ))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(in_ch, num_classes, 1)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[2], x.shape[3]
        logits = self.head(self.features(x)[-1])
        return nn.functional.interpolate(
            logits, size=(h, w), mode="bilinear", align_corners=False)

    def segment(self, image: np.ndarray) -> np.ndarray:
        """(3, H, W) image in [-1, 1] -> predicted class-ID grid."""
        with torch.no_grad():
            logits = self(torch.from_numpy(image).unsqueeze(0))
        return logits[0].argmax(dim=0).numpy().astype(np.int32)


def dataset_split(dataset: Dataset, val_fraction: float = 0.2):
    """Deterministic train/val index split (validation takes the tail)."""
    n = len(dataset)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    return list(range(n - n_val)), list(range(n - n_val, n))


def train_oracle(dataset: Dataset, seed: int = 0, steps: int = 500,
                 batch_size: int = 4, lr: float = 2e-3,
                 val_fraction: float = 0.2) -> tuple[OracleSegmenter, dict]:
    """Train the oracle on real images; returns the frozen net and provenance."""
    if len(dataset) < 2:
        raise ValueError("oracle training needs at least 2 samples")
    torch.manual_seed(seed)
    oracle = OracleSegmenter(dataset.num_classes)
    gen = torch.Generator().manual_seed(seed)
    for m in oracle.modules():
        if isinstance(m, nn.Conv2d):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.05, generator=gen)
                m.bias.zero_()
    train_idx, val_idx = dataset_split(dataset, val_fraction)
    opt = torch.optim.Adam(oracle.parameters(), lr=lr)
    ce = nn.CrossEntropyLoss()
    rng = np.random.Generator(np.random.PCG64(seed))
    step = 0
    while step < steps:
        order = rng.permutation(train_idx)
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            images = torch.stack(
                [torch.from_numpy(dataset[int(i)].image) for i in idx])
            labels = torch.stack(
                [torch.from_numpy(dataset[int(i)].label.grid.astype(np.int64))
                 for i in idx])
            logits = oracle(images)
            loss = ce(logits, labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if step >= steps:
                break
    oracle.eval()
    for p in oracle.parameters():
        p.requires_grad_(False)
    val_scores = oracle_scores_on_real(oracle, dataset, val_idx)
    provenance = {
        "seed": seed, "steps": steps, "batch_size": batch_size, "lr": lr,
        "train_samples": len(train_idx), "val_samples": len(val_idx),
        "val_pixel_accuracy": val_scores.pixel_accuracy,
        "val_mean_iou": val_scores.mean_iou,
    }
    return oracle, provenance


def save_oracle(oracle: OracleSegmenter, provenance: dict, path: str | Path):
    arrays = {}
    for key, tensor in oracle.state_dict().items():
        head, tail = key.rsplit(".", 1)
        arrays[f"oracle/{head}/{tail}"] = tensor.detach().numpy().astype("<f4")
    manifest = {
        "format_version": 1,
        "kind": "oracle",
        "num_classes": oracle.num_classes,
        "widths": list(oracle.widths),
        "strides": list(oracle.strides),
        "provenance": provenance,
        "arrays": {
            name: {"shape": list(a.shape), "dtype": "<f4",
                   "sha256": hashlib.sha256(a.tobytes()).hexdigest()}
            for name, a in arrays.items()
        },
    }
    save_bundle(ModelBundle(arrays=arrays, manifest=manifest), path)


def load_oracle(path: str | Path) -> OracleSegmenter:
    bundle = load_bundle(path)
    if bundle.manifest.get("kind") != "oracle":
        raise BundleIntegrityError(f"{path} is not an oracle bundle")
    oracle = OracleSegmenter(
        int(bundle.manifest["num_classes"]),
        widths=bundle.manifest["widths"],
        strides=bundle.manifest["strides"])
    bundle.load_into("oracle", oracle)
    oracle.eval()
    for p in oracle.parameters():
        p.requires_grad_(False)
    return oracle


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class SegScores:
    pixel_accuracy: float
    mean_iou: float
    per_class_iou: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pixel_accuracy": self.pixel_accuracy,
            "mean_iou": self.mean_iou,
            "per_class_iou": {str(k): v for k, v in self.per_class_iou.items()},
        }


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """(C, C) counts with rows = truth class, columns = predicted class."""
    if pred.shape != truth.shape:
        raise ValueError(f"dim mismatch: pred {pred.shape} vs truth {truth.shape}")
    idx = truth.reshape(-1).astype(np.int64) * num_classes + pred.reshape(-1).astype(np.int64)
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def scores_from_confusion(conf: np.ndarray) -> SegScores:
    total = conf.sum()
    correct = np.trace(conf)
    pixel_accuracy = float(correct / total) if total else 0.0
    per_class = {}
    for c in range(conf.shape[0]):
        inter = conf[c, c]
        union = conf[c, :].sum() + conf[:, c].sum() - inter
        if union > 0:  # class present in truth or prediction
            per_class[c] = float(inter / union)
    mean_iou = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return SegScores(pixel_accuracy=pixel_accuracy, mean_iou=mean_iou,
                     per_class_iou=per_class)


def seg_scores(predicted: LabelMap, truth: LabelMap) -> SegScores:
    num_classes = max(predicted.num_classes, truth.num_classes)
    return scores_from_confusion(
        confusion_matrix(predicted.grid, truth.grid, num_classes))


def oracle_scores_on_real(oracle: OracleSegmenter, dataset: Dataset,
                          indices=None) -> SegScores:
    indices = range(len(dataset)) if indices is None else indices
    conf = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for i in indices:
        pair = dataset[int(i)]
        pred = oracle.segment(pair.image)
        conf += confusion_matrix(pred, pair.label.grid, dataset.num_classes)
    return scores_from_confusion(conf)


# ---------------------------------------------------------------------------
# Model evaluation and ablation tables
# ---------------------------------------------------------------------------

def evaluate_model(engine: SynthesisEngine, dataset: Dataset,
                   oracle: OracleSegmenter, seed: int = 0) -> dict:
    """Synthesize every sample, segment with the oracle, score vs the input maps.

    The oracle's scores on the real images are reported as the upper
    reference. Aggregation sums confusion matrices over the whole set.
    """
    num_classes = dataset.num_classes
    conf_synth = np.zeros((num_classes, num_classes), dtype=np.int64)
    per_image = []
    for i in range(len(dataset)):
        pair = dataset[i]
        styles = engine.resolve_styles(pair.label, pair.instance, seed=seed + i) \
            if engine.uses_styles else None
        image = engine.synthesize(pair.label, pair.instance, styles)
        pred = oracle.segment(image)
        conf = confusion_matrix(pred, pair.label.grid, num_classes)
        conf_synth += conf
        per_image.append({"id": pair.id,
                          **scores_from_confusion(conf).to_dict()})
    synth = scores_from_confusion(conf_synth)
    real = oracle_scores_on_real(oracle, dataset)
    return {
        "synthesized": synth.to_dict(),
        "real_reference": real.to_dict(),
        "ratios": {
            "pixel_accuracy": (synth.pixel_accuracy / real.pixel_accuracy
                               if real.pixel_accuracy else 0.0),
            "mean_iou": (synth.mean_iou / real.mean_iou if real.mean_iou else 0.0),
        },
        "per_image": per_image,
        "num_samples": len(dataset),
    }


def ablation_compare(engines: dict[str, SynthesisEngine], dataset: Dataset,
                     oracle: OracleSegmenter, seed: int = 0) -> list[dict]:
    """One evaluate_model row per named variant."""
    rows = []
    for name in engines:
        report = evaluate_model(engines[name], dataset, oracle, seed=seed)
        rows.append({
            "name": name,
            "pixel_accuracy": report["synthesized"]["pixel_accuracy"],
            "mean_iou": report["synthesized"]["mean_iou"],
            "real_pixel_accuracy": report["real_reference"]["pixel_accuracy"],
            "real_mean_iou": report["real_reference"]["mean_iou"],
        })
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<24} {'pixel acc':>10} {'mean IoU':>10}"]
    for row in rows:
        lines.append(
            f"{row['name']:<24} {row['pixel_accuracy']:>10.4f} {row['mean_iou']:>10.4f}")
    return "\n".join(lines)
