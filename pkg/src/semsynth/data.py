"""Dataset I/O, conditioning-input construction, and the procedural shapes-world generator.

Grids are numpy arrays indexed (row, col); multi-plane tensors are (planes, H, W)
float32 so they map 1:1 onto torch's CHW layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class DataError(ValueError):
    """Base class for data-pipeline errors."""


class InvalidLabelError(DataError):
    """A label grid contains a class ID outside [0, num_classes)."""


class IncompleteStyleError(DataError):
    """A feature vector is missing for an instance present in the map."""


class CorruptSampleError(DataError):
    """Stored sample files disagree on dimensions or fail to decode."""


class ShapeError(DataError):
    """Spatial dimensions violate a divisibility or agreement constraint."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class IDs in [0, num_classes)."""

    grid: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.grid.ndim != 2:
            raise ShapeError(f"label grid must be 2-D, got {self.grid.ndim}-D")
        if self.num_classes < 2:
            raise InvalidLabelError(f"num_classes must be >= 2, got {self.num_classes}")
        if not np.issubdtype(self.grid.dtype, np.integer):
            raise InvalidLabelError(f"label grid must be integer, got {self.grid.dtype}")
        if self.grid.size and (self.grid.min() < 0 or self.grid.max() >= self.num_classes):
            raise InvalidLabelError(
                f"class IDs must lie in [0, {self.num_classes}), "
                f"found range [{self.grid.min()}, {self.grid.max()}]"
            )

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]


@dataclass(frozen=True)
class InstanceMap:
    """Per-pixel object IDs; 0 marks pixels that belong to no instance."""

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.ndim != 2:
            raise ShapeError(f"instance grid must be 2-D, got {self.grid.ndim}-D")
        if not np.issubdtype(self.grid.dtype, np.integer):
            raise DataError(f"instance grid must be integer, got {self.grid.dtype}")
        if self.grid.size and self.grid.min() < 0:
            raise DataError("instance IDs must be non-negative")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    def instance_ids(self) -> list[int]:
        """Nonzero IDs present in the map, ascending."""
        ids = np.unique(self.grid)
        return [int(i) for i in ids if i != 0]


@dataclass(frozen=True)
class BoundaryMap:
    """Binary map marking pixels whose instance ID differs from a 4-neighbor."""

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.ndim != 2:
            raise ShapeError("boundary grid must be 2-D")
        vals = np.unique(self.grid)
        if vals.size and not np.isin(vals, [0, 1]).all():
            raise DataError("boundary map values must be 0 or 1")


@dataclass(frozen=True)
class ConditioningTensor:
    """One-hot label planes + boundary plane (+ optional per-instance feature planes)."""

    planes: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.planes.ndim != 3:
            raise ShapeError("conditioning planes must be (P, H, W)")
        p = self.planes.shape[0]
        if p not in (self.num_classes + 1, self.num_classes + 4):
            raise ShapeError(
                f"plane count must be C+1 or C+4 (C={self.num_classes}), got {p}"
            )

    @property
    def has_features(self) -> bool:
        return self.planes.shape[0] == self.num_classes + 4

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class SamplePair:
    """A training pair: label/instance maps and the corresponding image in [-1, 1]."""

    label: LabelMap
    instance: InstanceMap
    image: np.ndarray  # (3, H, W) float32 in [-1, 1]
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError("image must be (3, H, W)")
        if self.image.shape[1:] != self.label.grid.shape:
            raise ShapeError("image and label dimensions disagree")
        if self.instance.grid.shape != self.label.grid.shape:
            raise ShapeError("instance and label dimensions disagree")


@dataclass(frozen=True)
class ImagePyramid:
    """Full, 1/2 and 1/4 resolution copies of an image, finest first."""

    levels: list[np.ndarray]

    def __post_init__(self):
        if len(self.levels) != 3:
            raise ShapeError("pyramid must have exactly 3 levels")


# ---------------------------------------------------------------------------
# Conditioning construction
# ---------------------------------------------------------------------------

def compute_boundary_map(instance: InstanceMap) -> BoundaryMap:
    """Mark pixels whose instance ID differs from any in-bounds 4-neighbor."""
    g = instance.grid
    b = np.zeros(g.shape, dtype=np.uint8)
    b[1:, :] |= (g[1:, :] != g[:-1, :])
    b[:-1, :] |= (g[1:, :] != g[:-1, :])
    b[:, 1:] |= (g[:, 1:] != g[:, :-1])
    b[:, :-1] |= (g[:, 1:] != g[:, :-1])
    return BoundaryMap(grid=b)


def encode_one_hot(label: LabelMap) -> np.ndarray:
    """Expand a label grid into C binary planes, plane c marking class c."""
    g = label.grid
    if g.size and g.max() >= label.num_classes:
        raise InvalidLabelError("class ID exceeds num_classes")
    planes = (g[None, :, :] == np.arange(label.num_classes)[:, None, None])
    return planes.astype(np.float32)


def build_conditioning(
    label: LabelMap,
    instance: InstanceMap,
    features: dict[int, np.ndarray] | None = None,
) -> ConditioningTensor:
    """Stack one-hot planes, the boundary plane, and optional broadcast feature planes.

    ``features`` maps nonzero instance IDs to 3-vectors; each vector is written
    at every pixel of its instance. Pixels with ID 0 keep zero features.
    """
    if label.grid.shape != instance.grid.shape:
        raise ShapeError("label and instance dimensions disagree")
    one_hot = encode_one_hot(label)
    boundary = compute_boundary_map(instance).grid.astype(np.float32)[None]
    parts = [one_hot, boundary]
    if features is not None:
        h, w = label.grid.shape
        feat_planes = np.zeros((3, h, w), dtype=np.float32)
        for inst_id in instance.instance_ids():
            if inst_id not in features:
                raise IncompleteStyleError(f"no feature vector for instance {inst_id}")
            vec = np.asarray(features[inst_id], dtype=np.float32).reshape(3)
            mask = instance.grid == inst_id
            for j in range(3):
                feat_planes[j][mask] = vec[j]
        parts.append(feat_planes)
    return ConditioningTensor(
        planes=np.concatenate(parts, axis=0), num_classes=label.num_classes
    )


def downsample_nearest(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Nearest-neighbor downsampling for integer ID grids (top-left sample)."""
    if grid.shape[0] % factor or grid.shape[1] % factor:
        raise ShapeError(f"dims {grid.shape} not divisible by {factor}")
    return grid[::factor, ::factor].copy()


def average_pool2(image: np.ndarray) -> np.ndarray:
    """2x2 average pooling of a (planes, H, W) array."""
    c, h, w = image.shape
    if h % 2 or w % 2:
        raise ShapeError(f"dims {h}x{w} not divisible by 2")
    return image.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def build_pyramid(image: np.ndarray) -> ImagePyramid:
    """Full, 1/2 and 1/4 resolution levels via 2x2 average pooling."""
    if image.ndim != 3:
        raise ShapeError("image must be (planes, H, W)")
    if image.shape[1] % 4 or image.shape[2] % 4:
        raise ShapeError(f"dims {image.shape[1]}x{image.shape[2]} not divisible by 4")
    half = average_pool2(image)
    quarter = average_pool2(half)
    return ImagePyramid(levels=[image, half, quarter])


# ---------------------------------------------------------------------------
# Shapes-world procedural dataset
# ---------------------------------------------------------------------------

CLASS_SKY = 0
CLASS_GROUND = 1
CLASS_DISC = 2
CLASS_RECT = 3
NUM_CLASSES = 4

CLASS_NAMES = ["sky", "ground", "disc", "rect"]

# Per-class style palettes; hue families are kept disjoint across classes so a
# small segmenter can separate classes while styles still vary within a class.
_PALETTES: dict[int, list[tuple[int, int, int]]] = {
    CLASS_SKY: [
        (72, 118, 214), (126, 164, 238), (44, 62, 158), (148, 122, 228),
        (92, 142, 200), (160, 180, 240), (60, 90, 180), (110, 100, 210),
    ],
    CLASS_GROUND: [
        (62, 158, 72), (152, 120, 58), (96, 128, 44), (172, 158, 92),
        (48, 120, 60), (130, 100, 48), (110, 150, 66), (88, 86, 40),
    ],
    CLASS_DISC: [
        (222, 62, 52), (240, 198, 60), (232, 120, 44), (202, 58, 158),
        (252, 90, 90), (216, 168, 40), (244, 140, 96), (178, 44, 110),
    ],
    CLASS_RECT: [
        (126, 126, 136), (58, 198, 208), (236, 236, 238), (84, 66, 52),
        (160, 158, 170), (96, 216, 200), (200, 204, 214), (120, 96, 80),
    ],
}


def style_tags(num_styles_per_class: int) -> dict[int, list[str]]:
    """Stable tag names for each class's first N palette entries."""
    return {
        c: [f"{CLASS_NAMES[c]}:{i}" for i in range(num_styles_per_class)]
        for c in range(NUM_CLASSES)
    }


def _vertical_gradient(h: int, w: int, lo: float, hi: float) -> np.ndarray:
    col = np.linspace(lo, hi, h, dtype=np.float32)
    return np.repeat(col[:, None], w, axis=1)


def _render_region(canvas: np.ndarray, mask: np.ndarray, color, shade: np.ndarray):
    base = np.asarray(color, dtype=np.float32)
    for ch in range(3):
        canvas[ch][mask] = base[ch] * shade[mask]


def generate_sample(
    rng: np.random.Generator, height: int, width: int, num_styles_per_class: int
) -> tuple[LabelMap, InstanceMap, np.ndarray, dict[str, str]]:
    """One scene: a sky/ground split plus 1-6 non-overlapping discs and rectangles.

    Returns (label, instance, image_uint8 HxWx3, texture tags keyed by region).
    Textures are chosen per region from the class palette, so the same layout
    can render to many different images.
    """
    n_styles = min(num_styles_per_class, len(_PALETTES[CLASS_SKY]))
    label = np.zeros((height, width), dtype=np.int16)
    inst = np.zeros((height, width), dtype=np.int32)
    canvas = np.zeros((3, height, width), dtype=np.float32)
    tags: dict[str, str] = {}

    horizon = int(height * rng.uniform(0.35, 0.65))
    label[horizon:, :] = CLASS_GROUND

    sky_style = int(rng.integers(n_styles))
    ground_style = int(rng.integers(n_styles))
    tags["sky"] = f"sky:{sky_style}"
    tags["ground"] = f"ground:{ground_style}"

    sky_shade = _vertical_gradient(height, width, 0.92, 1.12)
    _render_region(canvas, label == CLASS_SKY, _PALETTES[CLASS_SKY][sky_style], sky_shade)
    ground_shade = _vertical_gradient(height, width, 1.10, 0.86)
    _render_region(
        canvas, label == CLASS_GROUND, _PALETTES[CLASS_GROUND][ground_style], ground_shade
    )

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    occupied = np.zeros((height, width), dtype=bool)
    n_objects = int(rng.integers(1, 7))
    next_id = 1
    min_dim = min(height, width)
    for _ in range(n_objects):
        placed = False
        for _attempt in range(40):
            kind = CLASS_DISC if rng.random() < 0.5 else CLASS_RECT
            if kind == CLASS_DISC:
                r = rng.uniform(0.07, 0.16) * min_dim
                cy = rng.uniform(r + 1, height - r - 1)
                cx = rng.uniform(r + 1, width - r - 1)
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
            else:
                bh = rng.uniform(0.10, 0.26) * min_dim
                bw = rng.uniform(0.10, 0.26) * min_dim
                y0 = rng.uniform(1, height - bh - 1)
                x0 = rng.uniform(1, width - bw - 1)
                mask = (yy >= y0) & (yy < y0 + bh) & (xx >= x0) & (xx < x0 + bw)
            if not mask.any() or (mask & occupied).any():
                continue
            style = int(rng.integers(n_styles))
            color = _PALETTES[kind][style]
            if kind == CLASS_DISC:
                dist2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / max(r**2, 1.0)
                shade = 1.15 - 0.35 * dist2
            else:
                shade = _vertical_gradient(height, width, 1.08, 0.88)
            _render_region(canvas, mask, color, shade)
            label[mask] = kind
            inst[mask] = next_id
            occupied |= mask
            tags[str(next_id)] = f"{CLASS_NAMES[kind]}:{style}"
            next_id += 1
            placed = True
            break
        if not placed:
            continue  # skip this object; scene keeps the ones already placed

    image = np.clip(canvas, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return (
        LabelMap(grid=label, num_classes=NUM_CLASSES),
        InstanceMap(grid=inst),
        image,
        tags,
    )


def generate_shapes_dataset(
    seed: int,
    count: int,
    height: int,
    width: int,
    out_dir: str | Path,
    num_styles_per_class: int = 4,
) -> dict:
    """Write a shapes-world dataset to ``out_dir`` in the standard layout.

    Deterministic given ``seed``. Returns the metadata dict that is also
    stored as ``meta.json``.
    """
    if height % 32 or width % 32:
        raise ShapeError(f"dims {height}x{width} must be divisible by 32")
    out = Path(out_dir)
    for sub in ("labels", "instances", "images"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    samples_meta = {}
    for index in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))
        label, inst, image, tags = generate_sample(rng, height, width, num_styles_per_class)
        sid = f"{index:05d}"
        Image.fromarray(label.grid.astype(np.uint8)).save(out / "labels" / f"{sid}.png")
        Image.fromarray(inst.grid.astype(np.uint16)).save(out / "instances" / f"{sid}.png")
        Image.fromarray(image).save(out / "images" / f"{sid}.png")
        samples_meta[sid] = {"textures": tags}

    meta = {
        "num_classes": NUM_CLASSES,
        "class_names": CLASS_NAMES,
        "style_tags": {str(c): tags for c, tags in style_tags(num_styles_per_class).items()},
        "height": height,
        "width": width,
        "seed": seed,
        "count": count,
        "samples": samples_meta,
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return meta


# ---------------------------------------------------------------------------
# Dataset loading and batching
# ---------------------------------------------------------------------------

def image_to_unit_range(image_uint8: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 -> (3, H, W) float32 in [-1, 1]."""
    return (image_uint8.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def image_from_unit_range(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [-1, 1] -> HxWx3 uint8."""
    arr = np.clip((image + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    return arr.transpose(1, 2, 0)


@dataclass
class Dataset:
    """In-memory shapes-world dataset; images kept uint8 and scaled on access."""

    ids: list[str]
    labels: list[np.ndarray]
    instances: list[np.ndarray]
    images: list[np.ndarray]  # HxWx3 uint8
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> SamplePair:
        return SamplePair(
            label=LabelMap(grid=self.labels[i], num_classes=self.num_classes),
            instance=InstanceMap(grid=self.instances[i]),
            image=image_to_unit_range(self.images[i]),
            id=self.ids[i],
        )


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory written by ``generate_shapes_dataset``."""
    root = Path(path)
    meta = {}
    meta_path = root / "meta.json"
    if meta_path.exists():
        with open(meta_path) as f:
            meta = json.load(f)
    num_classes = int(meta.get("num_classes", NUM_CLASSES))

    labels_dir = root / "labels"
    ids = sorted(p.stem for p in labels_dir.glob("*.png")) if labels_dir.is_dir() else []

    labels, instances, images = [], [], []
    for sid in ids:
        try:
            label = np.array(Image.open(root / "labels" / f"{sid}.png")).astype(np.int16)
            inst = np.array(Image.open(root / "instances" / f"{sid}.png")).astype(np.int32)
            image = np.array(Image.open(root / "images" / f"{sid}.png").convert("RGB"))
        except Exception as exc:
            raise CorruptSampleError(f"sample {sid}: failed to decode ({exc})") from exc
        if label.shape != inst.shape or label.shape != image.shape[:2]:
            raise CorruptSampleError(
                f"sample {sid}: dimension mismatch label={label.shape} "
                f"instance={inst.shape} image={image.shape[:2]}"
            )
        labels.append(label)
        instances.append(inst)
        images.append(image)
    return Dataset(
        ids=ids, labels=labels, instances=instances, images=images,
        num_classes=num_classes, meta=meta,
    )


def iterate_batches(dataset: Dataset, batch_size: int, shuffle_seed: int | None = None):
    """Yield lists of SamplePair; order is deterministic under a fixed seed."""
    order = np.arange(len(dataset))
    if shuffle_seed is not None:
        order = np.random.Generator(np.random.PCG64(shuffle_seed)).permutation(order)
    for start in range(0, len(dataset), batch_size):
        yield [dataset[int(i)] for i in order[start : start + batch_size]]
