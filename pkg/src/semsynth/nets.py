"""Torch realization of parsed layer graphs.

Keeps a 1:1 mapping between LayerSpec entries and blocks so checkpoint names,
shape inference, and receptive-field math line up with the notation module.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .arch import LayerGraph, LayerSpec


def _make_activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=True)
    if name == "leaky_relu":
        return nn.LeakyReLU(0.2, inplace=True)
    if name == "tanh":
        return nn.Tanh()
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unknown activation {name}")


def _make_norm(name: str, channels: int) -> nn.Module:
    if name == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm {name}")


class ConvBlock(nn.Module):
    """conv -> norm -> activation; covers c7s1/d/C/O layer kinds."""

    def __init__(self, in_channels: int, spec: LayerSpec):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels,
            spec.filters,
            spec.kernel,
            stride=int(spec.stride),
            padding=spec.padding,
            padding_mode="reflect" if spec.padding_mode == "reflect" else "zeros",
        )
        self.norm = _make_norm(spec.norm, spec.filters)
        self.act = _make_activation(spec.activation)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class UpConvBlock(nn.Module):
    """Stride-1/2 fractional conv as a transposed conv with exact 2x output."""

    def __init__(self, in_channels: int, spec: LayerSpec):
        super().__init__()
        self.conv = nn.ConvTranspose2d(
            in_channels, spec.filters, spec.kernel,
            stride=2, padding=spec.padding, output_padding=1,
        )
        self.norm = _make_norm(spec.norm, spec.filters)
        self.act = _make_activation(spec.activation)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ResidualBlock(nn.Module):
    """Two 3x3 convs with InstanceNorm, ReLU after the first, additive skip."""

    def __init__(self, channels: int, spec: LayerSpec):
        super().__init__()
        pad = spec.padding
        mode = "reflect" if spec.padding_mode == "reflect" else "zeros"
        self.conv1 = nn.Conv2d(channels, channels, spec.kernel, padding=pad, padding_mode=mode)
        self.norm1 = _make_norm(spec.norm, channels)
        self.conv2 = nn.Conv2d(channels, channels, spec.kernel, padding=pad, padding_mode=mode)
        self.norm2 = _make_norm(spec.norm, channels)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


def build_blocks(graph: LayerGraph, input_planes: int) -> nn.ModuleList:
    """One torch block per layer of the graph."""
    blocks = nn.ModuleList()
    planes = input_planes
    for spec in graph.layers:
        if spec.kind == "residual_block":
            if spec.filters != planes:
                raise ValueError(
                    f"residual block {spec.token} expects {spec.filters} planes, got {planes}")
            blocks.append(ResidualBlock(planes, spec))
        elif spec.kind == "up_conv":
            blocks.append(UpConvBlock(planes, spec))
        else:
            blocks.append(ConvBlock(planes, spec))
        planes = spec.filters
    return blocks


def init_network_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Conv weights ~ N(0, 0.02^2), biases 0; norm scales 1, shifts 0.

    Deterministic given the torch generator; visits modules in registration
    order so the draw sequence is reproducible.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def set_requires_grad(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def avg_pool_pyramid(x: torch.Tensor, levels: int = 3) -> list[torch.Tensor]:
    """Finest-first pyramid via repeated 2x2 average pooling."""
    out = [x]
    for _ in range(levels - 1):
        out.append(torch.nn.functional.avg_pool2d(out[-1], 2))
    return out
