"""Multi-scale PatchGAN discriminators with intermediate feature taps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .arch import PATCH_DISCRIMINATOR_ARCH, parse_arch, receptive_field, scale_graph
from .nets import build_blocks


@dataclass
class DiscriminatorOutput:
    """Patch score map and the per-block feature taps for one scale."""

    score_map: torch.Tensor
    features: list[torch.Tensor]


class PatchDiscriminator(nn.Module):
    """Patch classifier over overlapping receptive fields; taps every block."""

    def __init__(self, input_planes: int, width_divisor: int = 1,
                 arch: str = PATCH_DISCRIMINATOR_ARCH):
        super().__init__()
        self.arch_string = arch
        self.input_planes = input_planes
        self.graph = scale_graph(parse_arch(arch), width_divisor)
        self.blocks = build_blocks(self.graph, input_planes)

    @property
    def num_taps(self) -> int:
        return len(self.blocks)

    def spec_json(self) -> bytes:
        """Canonical serialization of the layer specs (architecture identity)."""
        payload = [
            {**asdict(spec), "stride": str(spec.stride)} for spec in self.graph.layers
        ]
        for entry in payload:
            entry.pop("token", None)
        return json.dumps(payload, sort_keys=True).encode()

    def forward(self, cond: torch.Tensor, image: torch.Tensor) -> DiscriminatorOutput:
        if cond.shape[2:] != image.shape[2:]:
            raise ValueError(
                f"conditioning dims {tuple(cond.shape[2:])} != image dims "
                f"{tuple(image.shape[2:])}")
        x = torch.cat([cond, image], dim=1)
        if x.shape[1] != self.input_planes:
            raise ValueError(
                f"expected {self.input_planes} input planes, got {x.shape[1]}")
        taps: list[torch.Tensor] = []
        for block in self.blocks:
            x = block(x)
            taps.append(x)
        return DiscriminatorOutput(score_map=x, features=taps)


class MultiScaleDiscriminator(nn.Module):
    """Identical patch discriminators applied to the levels of an image pyramid."""

    def __init__(self, input_planes: int, width_divisor: int = 1, num_scales: int = 3,
                 arch: str = PATCH_DISCRIMINATOR_ARCH):
        super().__init__()
        self.num_scales = num_scales
        self.scales = nn.ModuleList(
            PatchDiscriminator(input_planes, width_divisor, arch)
            for _ in range(num_scales)
        )

    def d_forward(self, k: int, cond_at_scale: torch.Tensor,
                  image_at_scale: torch.Tensor) -> DiscriminatorOutput:
        """Apply discriminator k (1-based, 1 = finest scale)."""
        if not 1 <= k <= self.num_scales:
            raise ValueError(f"scale index {k} outside 1..{self.num_scales}")
        return self.scales[k - 1](cond_at_scale, image_at_scale)

    def multiscale_forward(
        self,
        cond_pyramid: list[torch.Tensor],
        image_pyramid: list[torch.Tensor],
    ) -> list[DiscriminatorOutput]:
        if len(cond_pyramid) != self.num_scales or len(image_pyramid) != self.num_scales:
            raise ValueError(
                f"expected {self.num_scales} pyramid levels, got "
                f"{len(cond_pyramid)} cond / {len(image_pyramid)} image")
        return [
            self.scales[k](cond_pyramid[k], image_pyramid[k])
            for k in range(self.num_scales)
        ]

    def patch_receptive_field(self) -> int:
        return receptive_field(self.scales[0].graph)
