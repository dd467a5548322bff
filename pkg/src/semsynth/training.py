"""Three-phase training schedule, alternating optimization, and checkpointing.

Discriminators keep absolute scales across phases: D1 at the full training
resolution, D2 at 1/2, D3 at 1/4. The global phase runs at half resolution
against D2+D3; the enhancer phase adds D1 at the new finest level with the
global network frozen; the joint phase trains everything against all three.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data as D
from .arch import (
    GLOBAL_GENERATOR_ARCH,
    LOCAL_ENHANCER_ARCH,
    PATCH_DISCRIMINATOR_ARCH,
    STYLE_ENCODER_ARCH,
    parse_arch,
)
from .discriminator import MultiScaleDiscriminator
from .encoder import StyleEncoder, instance_average_pool
from .generator import ComposedGenerator, GlobalGenerator, LocalEnhancer
from .losses import LossReport, LossWeights, total_d_loss, total_g_loss
from .nets import avg_pool_pyramid, init_network_weights, set_requires_grad


class TrainingError(RuntimeError):
    pass


class BundleError(ValueError):
    pass


class BundleIntegrityError(BundleError):
    """Archive is corrupt, truncated, or fails checksum validation."""


class BundleShapeError(BundleError):
    """Stored arrays do not match the receiving model's parameter shapes."""


class ConfigMismatchError(TrainingError):
    """Resume checkpoint was produced by a different configuration."""


NETWORK_NAMES = ("g1", "g2", "e", "d1", "d2", "d3")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class PhaseConfig:
    name: str
    networks_active: list[str]
    epochs: int
    resolution: tuple[int, int]  # (height, width) of generated images

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "networks_active": list(self.networks_active),
            "epochs": self.epochs,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseConfig":
        return cls(
            name=d["name"],
            networks_active=list(d["networks_active"]),
            epochs=int(d["epochs"]),
            resolution=(int(d["resolution"][0]), int(d["resolution"][1])),
        )


@dataclass
class TrainConfig:
    phases: list[PhaseConfig]
    full_resolution: tuple[int, int]  # (height, width)
    num_classes: int = 4
    lr: float = 0.0002
    adam_betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 4
    width_divisor: int = 4
    seed: int = 0
    lambda_fm: float = 10.0
    lambda_perc: float = 10.0
    use_perceptual: bool = False
    feature_net: str | None = None  # oracle bundle path when use_perceptual
    use_instance_maps: bool = True
    use_encoder: bool = False
    checkpoint_every: int = 0  # epochs; 0 = phase boundaries only

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.phases:
            raise ValueError("need at least one phase")
        h, w = self.full_resolution
        if h % 32 or w % 32:
            raise ValueError(f"full resolution {h}x{w} must be divisible by 32")
        if self.use_encoder and not self.use_instance_maps:
            raise ValueError("the style encoder requires instance maps")
        for phase in self.phases:
            if phase.epochs <= 0:
                raise ValueError(f"phase {phase.name}: epochs must be > 0")
            ph, pw = phase.resolution
            factor_h, factor_w = h // ph, w // pw
            if factor_h != factor_w or ph * factor_h != h or pw * factor_w != w \
                    or factor_h < 1 or factor_h & (factor_h - 1):
                raise ValueError(
                    f"phase {phase.name}: resolution {ph}x{pw} must divide "
                    f"{h}x{w} by a power of two")
            unknown = set(phase.networks_active) - set(NETWORK_NAMES)
            if unknown:
                raise ValueError(f"phase {phase.name}: unknown networks {unknown}")
            if "e" in phase.networks_active and not self.use_encoder:
                raise ValueError(f"phase {phase.name}: encoder active but use_encoder off")
            for k in self.d_scales_engaged(phase):
                self.d_level(phase, k)  # raises if the scale is finer than the phase

    def d_scales_engaged(self, phase: PhaseConfig) -> list[int]:
        return sorted(int(n[1]) for n in phase.networks_active if n.startswith("d"))

    def d_level(self, phase: PhaseConfig, k: int) -> int:
        """Pyramid level (0 = phase resolution) at which D_k operates."""
        abs_h = self.full_resolution[0] >> (k - 1)
        ph = phase.resolution[0]
        if abs_h > ph:
            raise ValueError(
                f"phase {phase.name}: d{k} operates at {abs_h} px but the phase "
                f"generates {ph} px")
        level = int(math.log2(ph // abs_h))
        if (abs_h << level) != ph:
            raise ValueError(f"phase {phase.name}: d{k} scale does not divide evenly")
        return level

    def to_dict(self) -> dict:
        return {
            "phases": [p.to_dict() for p in self.phases],
            "full_resolution": list(self.full_resolution),
            "num_classes": self.num_classes,
            "lr": self.lr,
            "adam_betas": list(self.adam_betas),
            "batch_size": self.batch_size,
            "width_divisor": self.width_divisor,
            "seed": self.seed,
            "lambda_fm": self.lambda_fm,
            "lambda_perc": self.lambda_perc,
            "use_perceptual": self.use_perceptual,
            "feature_net": self.feature_net,
            "use_instance_maps": self.use_instance_maps,
            "use_encoder": self.use_encoder,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            phases=[PhaseConfig.from_dict(p) for p in d["phases"]],
            full_resolution=(int(d["full_resolution"][0]), int(d["full_resolution"][1])),
            num_classes=int(d.get("num_classes", 4)),
            lr=float(d.get("lr", 0.0002)),
            adam_betas=tuple(d.get("adam_betas", (0.5, 0.999))),
            batch_size=int(d.get("batch_size", 4)),
            width_divisor=int(d.get("width_divisor", 4)),
            seed=int(d.get("seed", 0)),
            lambda_fm=float(d.get("lambda_fm", 10.0)),
            lambda_perc=float(d.get("lambda_perc", 10.0)),
            use_perceptual=bool(d.get("use_perceptual", False)),
            feature_net=d.get("feature_net"),
            use_instance_maps=bool(d.get("use_instance_maps", True)),
            use_encoder=bool(d.get("use_encoder", False)),
            checkpoint_every=int(d.get("checkpoint_every", 0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save_json(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def generator_mode(self) -> str:
        engaged = {n for p in self.phases for n in p.networks_active}
        return "composed" if "g2" in engaged else "global_only"


def three_phase_config(
    full_resolution: tuple[int, int] = (128, 256),
    epochs: tuple[int, int, int] = (14, 3, 3),
    use_encoder: bool = True,
    **kwargs,
) -> TrainConfig:
    """The standard schedule: global at half res, enhancer, then joint."""
    h, w = full_resolution
    e = ["e"] if use_encoder else []
    phases = [
        PhaseConfig("global", ["g1", *e, "d2", "d3"], epochs[0], (h // 2, w // 2)),
        PhaseConfig("enhancer", ["g2", *e, "d1"], epochs[1], (h, w)),
        PhaseConfig("joint", ["g1", "g2", *e, "d1", "d2", "d3"], epochs[2], (h, w)),
    ]
    return TrainConfig(phases=phases, full_resolution=full_resolution,
                       use_encoder=use_encoder, **kwargs)


def global_only_config(
    resolution: tuple[int, int],
    epochs: int,
    d_scales: int = 3,
    **kwargs,
) -> TrainConfig:
    """Single-phase schedule for ablations: G1 only, 1..3 discriminator scales."""
    nets = ["g1"] + [f"d{k}" for k in range(1, d_scales + 1)]
    phases = [PhaseConfig("global", nets, epochs, resolution)]
    return TrainConfig(phases=phases, full_resolution=resolution, **kwargs)


def lr_at_epoch(base_lr: float, epochs_constant: int, epochs_decay: int, epoch: int) -> float:
    """Constant, then linear to zero; zero beyond the schedule (0-based epoch)."""
    if epoch < epochs_constant:
        return base_lr
    if epochs_decay <= 0 or epoch >= epochs_constant + epochs_decay:
        return 0.0
    return base_lr * (1.0 - (epoch - epochs_constant) / epochs_decay)


def phase_lr(base_lr: float, total_epochs: int, epoch: int) -> float:
    """Half constant, half decaying (first half larger for odd counts)."""
    constant = (total_epochs + 1) // 2
    return lr_at_epoch(base_lr, constant, total_epochs - constant, epoch)


# ---------------------------------------------------------------------------
# Models and bundles
# ---------------------------------------------------------------------------

@dataclass
class Models:
    gen: ComposedGenerator
    msd: MultiScaleDiscriminator
    encoder: StyleEncoder | None
    arch: dict = field(default_factory=dict)

    def named_networks(self) -> dict[str, torch.nn.Module]:
        nets = {"g1": self.gen.g1}
        if self.gen.g2 is not None:
            nets["g2"] = self.gen.g2
        for i, d in enumerate(self.msd.scales, start=1):
            nets[f"d{i}"] = d
        if self.encoder is not None:
            nets["e"] = self.encoder
        return nets


def build_models(config: TrainConfig) -> Models:
    c = config.num_classes
    g_planes = c + 1 + (3 if config.use_encoder else 0)
    d_planes = c + 1 + 3
    g1 = GlobalGenerator(g_planes, config.width_divisor)
    g2 = LocalEnhancer(g_planes, config.width_divisor)
    gen = ComposedGenerator(g1, g2)
    msd = MultiScaleDiscriminator(d_planes, config.width_divisor)
    enc = StyleEncoder(config.width_divisor) if config.use_encoder else None
    arch = {
        "g1": GLOBAL_GENERATOR_ARCH,
        "g2": LOCAL_ENHANCER_ARCH,
        "d": PATCH_DISCRIMINATOR_ARCH,
        "e": STYLE_ENCODER_ARCH if enc is not None else None,
    }
    return Models(gen=gen, msd=msd, encoder=enc, arch=arch)


def init_weights(models: Models, seed: int) -> None:
    """Deterministic N(0, 0.02) conv init over all networks, in a fixed order."""
    gen = torch.Generator().manual_seed(seed)
    for name in NETWORK_NAMES:
        net = models.named_networks().get(name)
        if net is not None:
            init_network_weights(net, gen)


@dataclass
class ModelBundle:
    arrays: dict[str, np.ndarray]
    manifest: dict

    def load_into(self, prefix: str, module: torch.nn.Module) -> None:
        """Copy stored arrays into a module, failing on the first shape mismatch."""
        state = module.state_dict()
        for key in sorted(state):
            name = f"{prefix}/{_entry_name(key)}"
            if name not in self.arrays:
                raise BundleShapeError(f"missing array {name}")
            arr = self.arrays[name]
            if tuple(arr.shape) != tuple(state[key].shape):
                raise BundleShapeError(
                    f"shape mismatch for {name}: stored {tuple(arr.shape)}, "
                    f"model expects {tuple(state[key].shape)}")
        with torch.no_grad():
            for key in state:
                arr = self.arrays[f"{prefix}/{_entry_name(key)}"]
                state[key].copy_(torch.from_numpy(arr.copy()))


def _entry_name(state_key: str) -> str:
    """state-dict key -> <layer>/<param> archive entry segment."""
    if "." in state_key:
        head, tail = state_key.rsplit(".", 1)
        return f"{head}/{tail}"
    return state_key


def bundle_from_models(models: Models, config: TrainConfig,
                       progress: dict | None = None,
                       metrics: dict | None = None) -> ModelBundle:
    arrays: dict[str, np.ndarray] = {}
    for net_name, net in models.named_networks().items():
        for key, tensor in net.state_dict().items():
            arrays[f"{net_name}/{_entry_name(key)}"] = (
                tensor.detach().cpu().numpy().astype("<f4"))
    manifest = {
        "format_version": 1,
        "kind": "model",
        "num_classes": config.num_classes,
        "width_divisor": config.width_divisor,
        "full_resolution": list(config.full_resolution),
        "use_encoder": config.use_encoder,
        "use_instance_maps": config.use_instance_maps,
        "generator_mode": config.generator_mode,
        "arch": models.arch,
        "adam_betas": list(config.adam_betas),
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "progress": progress or {},
        "metrics": metrics or {},
        "arrays": {
            name: {"shape": list(arr.shape), "dtype": "<f4",
                   "sha256": hashlib.sha256(arr.tobytes()).hexdigest()}
            for name, arr in arrays.items()
        },
    }
    return ModelBundle(arrays=arrays, manifest=manifest)


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    """Deterministic zip archive: manifest.json + raw little-endian float32 arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = (1980, 1, 1, 0, 0, 0)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=stamp)
        zf.writestr(info, json.dumps(bundle.manifest, indent=1, sort_keys=True))
        for name in sorted(bundle.arrays):
            info = zipfile.ZipInfo(f"arrays/{name}", date_time=stamp)
            zf.writestr(info, bundle.arrays[name].astype("<f4").tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_bundle(path: str | Path) -> ModelBundle:
    """Read and fully validate an archive; no partial results on failure."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {}
            declared = manifest.get("arrays", {})
            stored = {n[len("arrays/"):] for n in zf.namelist() if n.startswith("arrays/")}
            if stored != set(declared):
                raise BundleIntegrityError(
                    f"archive entries disagree with manifest "
                    f"(extra: {sorted(stored - set(declared))[:3]}, "
                    f"missing: {sorted(set(declared) - stored)[:3]})")
            for name, meta in declared.items():
                raw = zf.read(f"arrays/{name}")
                if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
                    raise BundleIntegrityError(f"checksum mismatch for {name}")
                arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"])
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleIntegrityError(f"unreadable bundle {path}: {exc}") from exc
    for key, text in (manifest.get("arch") or {}).items():
        if text:
            parse_arch(text)  # must re-parse cleanly
    return ModelBundle(arrays=arrays, manifest=manifest)


def models_from_bundle(bundle: ModelBundle) -> tuple[Models, TrainConfig]:
    config = TrainConfig.from_dict(bundle.manifest["config"])
    models = build_models(config)
    for name, net in models.named_networks().items():
        bundle.load_into(name, net)
    return models, config


# ---------------------------------------------------------------------------
# Batch preparation
# ---------------------------------------------------------------------------

def _downsample_pair(label: np.ndarray, instance: np.ndarray, factor: int):
    if factor == 1:
        return label, instance
    return D.downsample_nearest(label, factor), D.downsample_nearest(instance, factor)


def _base_cond(label: np.ndarray, instance: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot + recomputed boundary planes (C+1, H, W) float32."""
    lm = D.LabelMap(grid=label, num_classes=num_classes)
    im = D.InstanceMap(grid=instance)
    one_hot = D.encode_one_hot(lm)
    boundary = D.compute_boundary_map(im).grid.astype(np.float32)[None]
    return np.concatenate([one_hot, boundary], axis=0)


@dataclass
class PreparedBatch:
    cond_base: torch.Tensor        # (N, C+1, h, w) at phase resolution
    cond_base_half: torch.Tensor | None
    instances: torch.Tensor        # (N, h, w) int64
    image: torch.Tensor            # (N, 3, h, w) in [-1, 1]


def prepare_batch(batch: list[D.SamplePair], phase_res: tuple[int, int],
                  num_classes: int, use_instance_maps: bool,
                  need_half: bool) -> PreparedBatch:
    ph, pw = phase_res
    conds, conds_half, insts, images = [], [], [], []
    for pair in batch:
        factor = pair.label.height // ph
        label = pair.label.grid
        instance = pair.instance.grid if use_instance_maps else np.zeros_like(pair.label.grid)
        label_p, inst_p = _downsample_pair(label, instance, factor)
        conds.append(_base_cond(label_p, inst_p, num_classes))
        if need_half:
            label_h, inst_h = _downsample_pair(label_p, inst_p, 2)
            conds_half.append(_base_cond(label_h, inst_h, num_classes))
        image = torch.from_numpy(pair.image)
        for _ in range(int(math.log2(factor))):
            image = torch.nn.functional.avg_pool2d(image.unsqueeze(0), 2).squeeze(0)
        images.append(image)
        insts.append(torch.from_numpy(inst_p.astype(np.int64)))
    return PreparedBatch(
        cond_base=torch.from_numpy(np.stack(conds)),
        cond_base_half=torch.from_numpy(np.stack(conds_half)) if need_half else None,
        instances=torch.stack(insts),
        image=torch.stack(images),
    )


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------

class Trainer:
    def __init__(self, config: TrainConfig, dataset: D.Dataset,
                 out_dir: str | Path, feature_net=None):
        if len(dataset) == 0:
            raise TrainingError("empty dataset")
        if dataset.num_classes != config.num_classes:
            raise TrainingError(
                f"dataset has {dataset.num_classes} classes, config expects "
                f"{config.num_classes}")
        sample = dataset[0]
        if (sample.label.height, sample.label.width) != tuple(config.full_resolution):
            raise TrainingError(
                f"dataset resolution {(sample.label.height, sample.label.width)} "
                f"differs from config {tuple(config.full_resolution)}")
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.feature_net = feature_net
        self.models = build_models(config)
        init_weights(self.models, config.seed)
        torch.manual_seed(config.seed)
        self.weights = LossWeights(
            lambda_fm=config.lambda_fm,
            lambda_perc=config.lambda_perc if config.use_perceptual else 0.0,
        )
        self.global_step = 0

    # -- per-phase machinery -------------------------------------------------

    def _engaged(self, phase: PhaseConfig) -> list[tuple[int, int]]:
        return [(k, self.config.d_level(phase, k))
                for k in self.config.d_scales_engaged(phase)]

    def _set_phase_grads(self, phase: PhaseConfig):
        for name, net in self.models.named_networks().items():
            set_requires_grad(net, name in phase.networks_active)

    def _phase_optimizers(self, phase: PhaseConfig):
        g_params, d_params = [], []
        for name, net in self.models.named_networks().items():
            if name not in phase.networks_active:
                continue
            (d_params if name.startswith("d") else g_params).extend(net.parameters())
        betas = tuple(self.config.adam_betas)
        g_opt = torch.optim.Adam(g_params, lr=self.config.lr, betas=betas) if g_params else None
        d_opt = torch.optim.Adam(d_params, lr=self.config.lr, betas=betas) if d_params else None
        return g_opt, d_opt

    def start_phase(self, phase: PhaseConfig):
        """Configure gradient flow for a phase and build its optimizers."""
        self._set_phase_grads(phase)
        return self._phase_optimizers(phase)

    def _forward_fake(self, phase: PhaseConfig, prepared: PreparedBatch):
        use_g2 = "g2" in phase.networks_active
        if self.models.encoder is not None:
            feat = self.models.encoder(prepared.image, prepared.instances)
            cond_full = torch.cat([prepared.cond_base, feat], dim=1)
            cond_half = None
            if use_g2:
                cond_half = torch.cat(
                    [prepared.cond_base_half, feat[:, :, ::2, ::2]], dim=1)
        else:
            cond_full = prepared.cond_base
            cond_half = prepared.cond_base_half if use_g2 else None
        if use_g2:
            return self.models.gen.composed_forward(cond_full, cond_half)
        image, _ = self.models.gen.g1_forward(cond_full)
        return image

    def train_step(self, batch: list[D.SamplePair], phase: PhaseConfig,
                   g_opt, d_opt) -> LossReport:
        """One D update then one G(+E) update on a batch."""
        engaged = self._engaged(phase)
        prepared = prepare_batch(
            batch, phase.resolution, self.config.num_classes,
            self.config.use_instance_maps, need_half="g2" in phase.networks_active)

        fake = self._forward_fake(phase, prepared)
        depth = max(level for _, level in engaged) + 1
        cond_pyr = avg_pool_pyramid(prepared.cond_base, depth)
        real_pyr = avg_pool_pyramid(prepared.image, depth)
        fake_pyr = avg_pool_pyramid(fake, depth)

        outs_real = [self.models.msd.d_forward(k, cond_pyr[lvl], real_pyr[lvl])
                     for k, lvl in engaged]
        outs_fake_d = [self.models.msd.d_forward(k, cond_pyr[lvl], fake_pyr[lvl].detach())
                       for k, lvl in engaged]
        d_loss, d_report = total_d_loss(outs_real, outs_fake_d, self.weights)
        real_feats = [[f.detach() for f in o.features] for o in outs_real]

        # during the G pass the discriminators only extract features
        set_requires_grad(self.models.msd, False)
        outs_fake_g = [self.models.msd.d_forward(k, cond_pyr[lvl], fake_pyr[lvl])
                       for k, lvl in engaged]
        g_loss, g_report = total_g_loss(
            outs_fake_g, real_feats, x=prepared.image, g_s=fake,
            feature_net=self.feature_net if self.config.use_perceptual else None,
            weights=self.weights)
        self._set_phase_grads(phase)

        if not (math.isfinite(float(d_loss.detach())) and math.isfinite(float(g_loss.detach()))):
            snap = self.out_dir / "diagnostic_nonfinite.bundle"
            save_bundle(self.to_bundle({"step": self.global_step}), snap)
            raise TrainingError(
                f"non-finite loss at step {self.global_step}; snapshot at {snap}")

        if d_opt is not None:
            d_opt.zero_grad(set_to_none=True)
            d_loss.backward()
        if g_opt is not None:
            g_opt.zero_grad(set_to_none=True)
            g_loss.backward()
        if d_opt is not None:
            d_opt.step()
        if g_opt is not None:
            g_opt.step()

        report = LossReport(
            g_gan_per_scale=g_report.g_gan_per_scale,
            g_fm_per_scale=g_report.g_fm_per_scale,
            d_real_per_scale=d_report.d_real_per_scale,
            d_fake_per_scale=d_report.d_fake_per_scale,
            g_gan=g_report.g_gan, g_fm=g_report.g_fm, g_perc=g_report.g_perc,
            d_real=d_report.d_real, d_fake=d_report.d_fake,
            g_total=g_report.g_total, d_total=d_report.d_total,
        )
        self.global_step += 1
        return report

    def to_bundle(self, progress: dict | None = None, metrics: dict | None = None) -> ModelBundle:
        return bundle_from_models(self.models, self.config, progress, metrics)

    # -- schedule -------------------------------------------------------------

    def run(self, resume: str | Path | None = None, force: bool = False,
            log_fn=None) -> Path:
        """Run all phases; returns the final bundle path."""
        start_phase, start_epoch = 0, 0
        if resume is not None:
            ckpt = load_bundle(resume)
            if ckpt.manifest.get("config_hash") != self.config.config_hash() and not force:
                raise ConfigMismatchError(
                    "checkpoint config differs from the current config "
                    "(pass force=True to override)")
            for name, net in self.models.named_networks().items():
                ckpt.load_into(name, net)
            progress = ckpt.manifest.get("progress", {})
            start_phase = int(progress.get("phase", 0))
            start_epoch = int(progress.get("epochs_done", 0))
            self.global_step = int(progress.get("step", 0))

        log_path = self.out_dir / "train_log.jsonl"
        ckpt_dir = self.out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        mode = "a" if resume is not None else "w"
        with open(log_path, mode) as log:
            for p_idx, phase in enumerate(self.config.phases):
                if p_idx < start_phase:
                    continue
                first_epoch = start_epoch if p_idx == start_phase else 0
                if first_epoch >= phase.epochs:
                    continue
                g_opt, d_opt = self.start_phase(phase)
                for epoch in range(first_epoch, phase.epochs):
                    lr = phase_lr(self.config.lr, phase.epochs, epoch)
                    for opt in (g_opt, d_opt):
                        if opt is not None:
                            for group in opt.param_groups:
                                group["lr"] = lr
                    shuffle_seed = (self.config.seed * 1_000_003
                                    + p_idx * 10_007 + epoch)
                    for batch in D.iterate_batches(
                            self.dataset, self.config.batch_size, shuffle_seed):
                        report = self.train_step(batch, phase, g_opt, d_opt)
                        entry = {"step": self.global_step, "phase": phase.name,
                                 "phase_index": p_idx, "epoch": epoch, "lr": lr,
                                 **report.to_dict()}
                        log.write(json.dumps(entry) + "\n")
                        if log_fn is not None:
                            log_fn(entry)
                    log.flush()
                    done = epoch + 1
                    progress = {"phase": p_idx, "epochs_done": done,
                                "step": self.global_step}
                    if (self.config.checkpoint_every
                            and done % self.config.checkpoint_every == 0
                            and done < phase.epochs):
                        save_bundle(self.to_bundle(progress),
                                    ckpt_dir / f"phase{p_idx + 1}_epoch{done:03d}.bundle")
                progress = {"phase": p_idx + 1, "epochs_done": 0,
                            "step": self.global_step}
                save_bundle(self.to_bundle(progress),
                            ckpt_dir / f"phase{p_idx + 1}_final.bundle")
        final_path = self.out_dir / "model.bundle"
        save_bundle(self.to_bundle({"phase": len(self.config.phases), "epochs_done": 0,
                                    "step": self.global_step}), final_path)
        return final_path


def run_schedule(config: TrainConfig, dataset: D.Dataset, out_dir: str | Path,
                 feature_net=None, resume=None, force=False, log_fn=None) -> Path:
    trainer = Trainer(config, dataset, out_dir, feature_net=feature_net)
    return trainer.run(resume=resume, force=force, log_fn=log_fn)
