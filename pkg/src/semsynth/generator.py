"""Coarse-to-fine generator: global network, local enhancer, and their fusion."""
from __future__ import annotations

from fractions import Fraction

import torch
import torch.nn as nn

from .arch import (
    GLOBAL_GENERATOR_ARCH,
    LOCAL_ENHANCER_ARCH,
    LOCAL_ENHANCER_FUSION_POINT,
    LayerGraph,
    parse_arch,
    scale_graph,
)
from .nets import build_blocks, set_requires_grad


class GlobalGenerator(nn.Module):
    """Front-end, residual trunk, and transposed-conv back-end at half resolution.

    ``forward`` returns both the image and the feature map that feeds the
    image head; the latter is what the enhancer fuses with.
    """

    def __init__(self, input_planes: int, width_divisor: int = 1,
                 arch: str = GLOBAL_GENERATOR_ARCH):
        super().__init__()
        self.arch_string = arch
        self.width_divisor = width_divisor
        self.input_planes = input_planes
        self.graph: LayerGraph = scale_graph(parse_arch(arch), width_divisor)
        blocks = build_blocks(self.graph, input_planes)
        self.body = blocks[:-1]
        self.head = blocks[-1]

    @property
    def feature_planes(self) -> int:
        return self.graph.layers[-2].filters

    def forward(self, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if cond.shape[1] != self.input_planes:
            raise ValueError(
                f"expected {self.input_planes} conditioning planes, got {cond.shape[1]}")
        if cond.shape[2] % 16 or cond.shape[3] % 16:
            raise ValueError(
                f"dims {tuple(cond.shape[2:])} must be divisible by 16")
        x = cond
        for block in self.body:
            x = block(x)
        return self.head(x), x


class LocalEnhancer(nn.Module):
    """Full-resolution enhancer; its residual trunk consumes the fused feature map."""

    def __init__(self, input_planes: int, width_divisor: int = 1,
                 arch: str = LOCAL_ENHANCER_ARCH,
                 fusion_point: int = LOCAL_ENHANCER_FUSION_POINT):
        super().__init__()
        self.arch_string = arch
        self.width_divisor = width_divisor
        self.input_planes = input_planes
        self.graph = scale_graph(parse_arch(arch), width_divisor).with_fusion(fusion_point)
        blocks = build_blocks(self.graph, input_planes)
        self.front = blocks[:fusion_point]
        self.tail = blocks[fusion_point:-1]
        self.head = blocks[-1]

    @property
    def fusion_planes(self) -> int:
        return self.graph.layers[self.graph.fusion_point - 1].filters

    def front_end(self, cond: torch.Tensor) -> torch.Tensor:
        x = cond
        for block in self.front:
            x = block(x)
        return x

    def forward(self, cond: torch.Tensor, fused_extra: torch.Tensor,
                return_feature: bool = False):
        """Image, and optionally the pre-head feature (for a further enhancer)."""
        x = self.front_end(cond)
        if x.shape != fused_extra.shape:
            raise ValueError(
                f"fusion shape mismatch: front-end {tuple(x.shape)} vs "
                f"global feature {tuple(fused_extra.shape)}")
        x = x + fused_extra
        for block in self.tail:
            x = block(x)
        if return_feature:
            return self.head(x), x
        return self.head(x)


class ComposedGenerator(nn.Module):
    """The generator tuple: global network alone or with the local enhancer."""

    def __init__(self, g1: GlobalGenerator, g2: LocalEnhancer | None = None):
        super().__init__()
        self.g1 = g1
        self.g2 = g2
        if g2 is not None and g2.fusion_planes != g1.feature_planes:
            raise ValueError(
                f"enhancer fuses {g2.fusion_planes} planes but global network "
                f"produces {g1.feature_planes}")

    @property
    def mode(self) -> str:
        return "global_only" if self.g2 is None else "composed"

    def g1_forward(self, cond_half: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.g1(cond_half)

    def composed_forward(self, cond_full: torch.Tensor, cond_half: torch.Tensor) -> torch.Tensor:
        if self.g2 is None:
            raise RuntimeError("composed_forward requires a local enhancer")
        if (cond_full.shape[2] != 2 * cond_half.shape[2]
                or cond_full.shape[3] != 2 * cond_half.shape[3]):
            raise ValueError(
                f"full dims {tuple(cond_full.shape[2:])} must be 2x half dims "
                f"{tuple(cond_half.shape[2:])}")
        _, feature = self.g1(cond_half)
        return self.g2(cond_full, feature)

    def synthesize(self, cond_full: torch.Tensor, cond_half: torch.Tensor | None = None):
        """Image at the operating resolution for either mode."""
        if self.g2 is None:
            image, _ = self.g1(cond_full)
            return image
        if cond_half is None:
            raise ValueError("composed mode needs the half-resolution conditioning")
        return self.composed_forward(cond_full, cond_half)


def freeze(module: nn.Module) -> None:
    """Stop gradient flow into the sub-network; parameter values untouched."""
    set_requires_grad(module, False)


def unfreeze(module: nn.Module) -> None:
    set_requires_grad(module, True)


def _steps(graph: LayerGraph, skip_head: bool = False):
    layers = graph.layers[:-1] if skip_head else graph.layers
    for spec in layers:
        reps = 2 if spec.kind == "residual_block" else 1
        for _ in range(reps):
            yield spec.kernel, spec.stride


def composed_receptive_field(g1: GlobalGenerator, g2: LocalEnhancer) -> int:
    """Conservative receptive field of the composed output in full-res pixels.

    Two paths feed each output pixel: through the enhancer front-end, and
    through the global network at half resolution (whose conditioning is a
    2x nearest-neighbor downsample, hence the factor 2 and alignment slack).
    """
    def chain(steps) -> Fraction:
        r, jump = Fraction(1), Fraction(1)
        for kernel, stride in steps:
            r += (kernel - 1) * jump
            jump *= stride
        return r

    tail_steps = list(_steps(g2.graph))[g2.graph.fusion_point:]
    front_steps = list(_steps(g2.graph))[: g2.graph.fusion_point]

    r_front = chain(front_steps + tail_steps)
    r_global = chain(list(_steps(g1.graph, skip_head=True)) + tail_steps)
    r_global_full = 2 * r_global + 2

    r = max(r_front, r_global_full)
    return int(r) if r.denominator == 1 else int(r) + 1
