"""Compact architecture notation: parsing, shape inference, receptive fields.

Token glossary (following the convolutional style-transfer naming convention):

  c7s1-k  7x7 conv, stride 1, reflect padding, InstanceNorm + ReLU
  dk      3x3 conv, stride 2, InstanceNorm + ReLU (exact halving)
  Rk      residual block: two 3x3 convs, k filters, reflect padding,
          InstanceNorm on both, ReLU after the first only, additive skip
  uk      3x3 transposed conv, stride 1/2 (exact doubling), InstanceNorm + ReLU
  Ck      4x4 conv, stride 2, InstanceNorm + LeakyReLU(0.2); the first patch
          block carries no norm; the closing block of a multi-block patch
          stack runs stride 1 (keeps the 70 px patch footprint)
  Ok      4x4 conv, stride 1, k filters, no norm, no activation (score head)

A trailing ``c7s1-3`` is the image head: tanh activation, no norm. Tokens
accept an ``xN``/``×N`` repetition suffix. Separators are commas, hyphens, or
whitespace. This module is framework-free; building runnable networks from a
graph lives elsewhere.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction


class ArchError(ValueError):
    """Base class for architecture notation errors."""


class ArchParseError(ArchError):
    """Malformed or unknown token in an architecture string."""


class ShapeInferenceError(ArchError):
    """Input dimensions are incompatible with the layer stack."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | down_conv | residual_block | up_conv | patch_conv | final_conv
    filters: int
    kernel: int
    stride: Fraction
    norm: str  # instance | none
    activation: str  # relu | leaky_relu | tanh | none
    padding_mode: str  # reflect | zero
    token: str = field(default="", compare=False)

    def __post_init__(self):
        if self.filters < 1:
            raise ArchParseError(f"filters must be >= 1, got {self.filters}")
        if self.stride not in (Fraction(1), Fraction(2), Fraction(1, 2)):
            raise ArchParseError(f"stride must be 1, 2 or 1/2, got {self.stride}")

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2


@dataclass(frozen=True)
class LayerGraph:
    layers: tuple[LayerSpec, ...]
    fusion_point: int | None = None  # external map added to the output of layers[:fusion_point]
    source: str = ""

    def with_fusion(self, index: int) -> "LayerGraph":
        if not 0 < index <= len(self.layers):
            raise ArchError(f"fusion point {index} outside layer range")
        return replace(self, fusion_point=index)

    @property
    def output_planes(self) -> int:
        return self.layers[-1].filters


_TOKEN_RE = re.compile(r"(c7s1-\d+|R\d+|d\d+|u\d+|C\d+|O\d+)(?:[x×](\d+))?")
_SEPARATORS = set(", -\t\n")


def _tokenize(text: str) -> list[tuple[str, int]]:
    """Split an architecture string into (token, position) pairs."""
    tokens: list[tuple[str, int]] = []
    pos = 0
    while pos < len(text):
        if text[pos] in _SEPARATORS:
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ArchParseError(f"unknown token at position {pos}: {text[pos:pos + 12]!r}")
        repeat = int(m.group(2)) if m.group(2) else 1
        if repeat < 1:
            raise ArchParseError(f"repetition count must be >= 1 at position {pos}")
        tokens.extend([(m.group(1), pos)] * repeat)
        pos = m.end()
    return tokens


def parse_arch(spec_string: str) -> LayerGraph:
    """Parse an architecture string into an ordered layer graph."""
    tokens = _tokenize(spec_string)
    if not tokens:
        raise ArchParseError("empty architecture string")

    layers: list[LayerSpec] = []
    patch_positions = [i for i, (tok, _) in enumerate(tokens) if tok.startswith("C")]
    for i, (tok, pos) in enumerate(tokens):
        is_last = i == len(tokens) - 1
        if tok.startswith("c7s1-"):
            filters = int(tok[len("c7s1-"):])
            if is_last and filters == 3:
                layers.append(LayerSpec("final_conv", filters, 7, Fraction(1),
                                        "none", "tanh", "reflect", tok))
            else:
                layers.append(LayerSpec("conv", filters, 7, Fraction(1),
                                        "instance", "relu", "reflect", tok))
        elif tok.startswith("d"):
            layers.append(LayerSpec("down_conv", int(tok[1:]), 3, Fraction(2),
                                    "instance", "relu", "zero", tok))
        elif tok.startswith("R"):
            layers.append(LayerSpec("residual_block", int(tok[1:]), 3, Fraction(1),
                                    "instance", "relu", "reflect", tok))
        elif tok.startswith("u"):
            layers.append(LayerSpec("up_conv", int(tok[1:]), 3, Fraction(1, 2),
                                    "instance", "relu", "zero", tok))
        elif tok.startswith("C"):
            first_patch = patch_positions and i == patch_positions[0]
            closing_patch = len(patch_positions) > 1 and i == patch_positions[-1]
            layers.append(LayerSpec(
                "patch_conv", int(tok[1:]), 4,
                Fraction(1) if closing_patch else Fraction(2),
                "none" if first_patch else "instance",
                "leaky_relu", "zero", tok))
        elif tok.startswith("O"):
            layers.append(LayerSpec("final_conv", int(tok[1:]), 4, Fraction(1),
                                    "none", "none", "zero", tok))
        else:  # pragma: no cover - tokenizer only emits known forms
            raise ArchParseError(f"unknown token at position {pos}: {tok!r}")
    return LayerGraph(layers=tuple(layers), source=spec_string)


def print_arch(graph: LayerGraph) -> str:
    """Canonical comma-separated token string for a graph."""
    out = []
    for spec in graph.layers:
        if spec.kind in ("conv",):
            out.append(f"c7s1-{spec.filters}")
        elif spec.kind == "final_conv" and spec.kernel == 7:
            out.append(f"c7s1-{spec.filters}")
        elif spec.kind == "final_conv":
            out.append(f"O{spec.filters}")
        elif spec.kind == "down_conv":
            out.append(f"d{spec.filters}")
        elif spec.kind == "residual_block":
            out.append(f"R{spec.filters}")
        elif spec.kind == "up_conv":
            out.append(f"u{spec.filters}")
        elif spec.kind == "patch_conv":
            out.append(f"C{spec.filters}")
        else:
            raise ArchError(f"unprintable layer kind {spec.kind}")
    return ",".join(out)


def scale_graph(graph: LayerGraph, divisor: int) -> LayerGraph:
    """Divide every non-head filter count by ``divisor`` (floor, min 1)."""
    if divisor < 1:
        raise ArchError(f"width divisor must be >= 1, got {divisor}")
    scaled = tuple(
        spec if spec.kind == "final_conv"
        else replace(spec, filters=max(1, spec.filters // divisor))
        for spec in graph.layers
    )
    return replace(graph, layers=scaled)


def infer_shapes(
    graph: LayerGraph, input_h: int, input_w: int, input_planes: int
) -> list[tuple[int, int, int]]:
    """Per-layer (planes, h, w) after each layer of the graph.

    Generator-style stride-2 layers demand even inputs (so the up path can
    restore them); patch blocks use ordinary floor arithmetic.
    """
    shapes: list[tuple[int, int, int]] = []
    planes, h, w = input_planes, input_h, input_w
    for idx, spec in enumerate(graph.layers):
        if spec.kind == "down_conv":
            if h % 2 or w % 2:
                raise ShapeInferenceError(
                    f"layer {idx} ({spec.token}): dims {h}x{w} not divisible by 2")
            h, w = h // 2, w // 2
        elif spec.kind == "up_conv":
            h, w = h * 2, w * 2
        elif spec.kind == "residual_block":
            if spec.filters != planes:
                raise ShapeInferenceError(
                    f"layer {idx} ({spec.token}): residual filters {spec.filters} "
                    f"!= input planes {planes}")
        elif spec.stride == 2:
            h = (h + 2 * spec.padding - spec.kernel) // 2 + 1
            w = (w + 2 * spec.padding - spec.kernel) // 2 + 1
        else:  # stride-1 conv
            h = h + 2 * spec.padding - spec.kernel + 1
            w = w + 2 * spec.padding - spec.kernel + 1
        if h < 1 or w < 1:
            raise ShapeInferenceError(
                f"layer {idx} ({spec.token}): spatial dims collapsed to {h}x{w}")
        planes = spec.filters
        shapes.append((planes, h, w))
    return shapes


def _conv_steps(graph: LayerGraph) -> list[tuple[int, Fraction]]:
    """Flatten the graph into (kernel, stride) conv steps, residuals as two."""
    steps: list[tuple[int, Fraction]] = []
    for spec in graph.layers:
        if spec.kind == "residual_block":
            steps.append((spec.kernel, Fraction(1)))
            steps.append((spec.kernel, Fraction(1)))
        else:
            steps.append((spec.kernel, spec.stride))
    return steps


def receptive_field(graph: LayerGraph) -> int:
    """Input pixels seen by one unit of the final layer (standard recurrence)."""
    r = Fraction(1)
    jump = Fraction(1)
    for kernel, stride in _conv_steps(graph):
        r += (kernel - 1) * jump
        jump *= stride
    return int(r) if r.denominator == 1 else int(r) + 1


def output_interval(graph: LayerGraph, out_index: int) -> tuple[int, int]:
    """Closed input-index interval feeding output position ``out_index``.

    Only integer-stride graphs (discriminators) are supported; intervals may
    extend past the input borders where padding was consumed.
    """
    lo = hi = out_index
    for spec in reversed(graph.layers):
        if spec.stride.denominator != 1:
            raise ArchError("output_interval requires integer strides")
        reps = 2 if spec.kind == "residual_block" else 1
        for _ in range(reps):
            s = int(spec.stride)
            lo = lo * s - spec.padding
            hi = hi * s - spec.padding + spec.kernel - 1
    return lo, hi


def conv_param_count(graph: LayerGraph, input_planes: int) -> int:
    """Convolution weights + biases over the whole graph (norm affine excluded)."""
    total = 0
    planes = input_planes
    for spec in graph.layers:
        if spec.kind == "residual_block":
            total += 2 * (spec.kernel**2 * spec.filters * spec.filters + spec.filters)
        else:
            total += spec.kernel**2 * planes * spec.filters + spec.filters
        planes = spec.filters
    return total


# Architectures used throughout; strings are the paper-scale token forms.
GLOBAL_GENERATOR_ARCH = (
    "c7s1-64,d128,d256,d512,d1024,"
    "R1024,R1024,R1024,R1024,R1024,R1024,R1024,R1024,R1024,"
    "u512,u256,u128,u64,c7s1-3"
)
LOCAL_ENHANCER_ARCH = "c7s1-32,d64,R64,R64,R64,u32,c7s1-3"
LOCAL_ENHANCER_FUSION_POINT = 2  # fuse after d64
PATCH_DISCRIMINATOR_ARCH = "C64-C128-C256-C512,O1"
STYLE_ENCODER_ARCH = "c7s1-16,d32,d64,u32,u16,c7s1-3"


def format_shape_table(
    graph: LayerGraph, input_h: int, input_w: int, input_planes: int
) -> str:
    """Human-readable shape table plus receptive field, for the CLI."""
    shapes = infer_shapes(graph, input_h, input_w, input_planes)
    lines = [f"{'layer':<6} {'token':<10} {'planes':>6} {'height':>6} {'width':>6}"]
    lines.append(f"{'input':<6} {'-':<10} {input_planes:>6} {input_h:>6} {input_w:>6}")
    for idx, (spec, (p, h, w)) in enumerate(zip(graph.layers, shapes)):
        lines.append(f"{idx:<6} {spec.token:<10} {p:>6} {h:>6} {w:>6}")
    lines.append(f"receptive field: {receptive_field(graph)} px")
    lines.append(f"conv parameters: {conv_param_count(graph, input_planes)}")
    return "\n".join(lines)
