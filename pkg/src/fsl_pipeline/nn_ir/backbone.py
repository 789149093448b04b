"""ResNet-9 / ResNet-12 backbones for few-shot feature extraction."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

from ..errors import SpecError
from .graph import INPUT, Graph, Layer, LayerKind, infer_shapes


class Depth(int, Enum):
    RESNET9 = 9
    RESNET12 = 12

    @property
    def blocks(self) -> int:
        # ResNet-9 is ResNet-12 minus its last residual block
        return 3 if self is Depth.RESNET9 else 4

    @classmethod
    def parse(cls, value) -> "Depth":
        if isinstance(value, Depth):
            return value
        text = str(value).lower().replace("resnet", "").replace("-", "")
        try:
            return cls(int(text))
        except ValueError:
            raise SpecError(f"unknown depth {value!r} (expected 9 or 12)") from None


class Downsampling(str, Enum):
    STRIDED = "strided"
    MAXPOOL = "maxpool"

    @classmethod
    def parse(cls, value) -> "Downsampling":
        if isinstance(value, Downsampling):
            return value
        text = str(value).lower().replace("_", "").replace("-", "")
        aliases = {"s": "strided", "m": "maxpool", "pool": "maxpool"}
        try:
            return cls(aliases.get(text, text))
        except ValueError:
            raise SpecError(f"unknown downsampling {value!r}") from None


@dataclass(frozen=True)
class BackboneSpec:
    depth: Depth
    first_feature_maps: int
    downsampling: Downsampling
    input_resolution: int
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depth", Depth.parse(self.depth))
        object.__setattr__(self, "downsampling", Downsampling.parse(self.downsampling))
        if self.first_feature_maps < 1:
            raise SpecError(f"invalid feature-map count {self.first_feature_maps} (must be >= 1)")
        if self.input_channels < 1:
            raise SpecError(f"invalid input channel count {self.input_channels}")
        if self.input_resolution < 2 ** self.depth.blocks:
            raise SpecError(
                f"resolution-too-small: {self.input_resolution}px cannot survive "
                f"{self.depth.blocks} downsampling stages")

    @property
    def block_channels(self) -> List[int]:
        return [self.first_feature_maps * 2 ** i for i in range(self.depth.blocks)]

    @property
    def name(self) -> str:
        return (f"resnet{self.depth.value}_fm{self.first_feature_maps}_"
                f"{self.downsampling.value}_r{self.input_resolution}")


def build_backbone(spec: BackboneSpec) -> Graph:
    """Build the (unfolded, shape-inferred) graph described by ``spec``."""
    return build_residual_net(spec.block_channels, spec.downsampling,
                              spec.input_resolution, spec.input_channels, name=spec.name)


def build_residual_net(channels: Sequence[int], downsampling, resolution: int,
                       input_channels: int = 3, name: str = "resnet") -> Graph:
    """Stack one residual block per entry of ``channels`` and finish with global pooling.

    Each block is three 3x3 conv+BN on the main path (ReLU after the first
    two), a 1x1 conv+BN projection on the skip path, an Add and a ReLU. The
    block downsamples once: either both path-final convs use stride 2, or a
    2x2 max-pool follows the block's ReLU.
    """
    downsampling = Downsampling.parse(downsampling)
    if not channels or min(channels) < 1:
        raise SpecError(f"invalid feature-map counts {list(channels)}")
    if resolution < 2 ** len(channels):
        raise SpecError(f"resolution-too-small: {resolution}px for {len(channels)} blocks")
    stride = 2 if downsampling is Downsampling.STRIDED else 1
    nodes: List[Layer] = []

    def conv(lid, src, cin, cout, k, s=1):
        nodes.append(Layer(lid, LayerKind.CONV2D, (src,), {
            "in_channels": cin, "out_channels": cout, "kernel": k, "stride": s, "padding": "same"}))
        nodes.append(Layer(lid + "_bn", LayerKind.BATCHNORM, (lid,), {"channels": cout, "eps": 1e-5}))
        return lid + "_bn"

    def relu(lid, src):
        nodes.append(Layer(lid, LayerKind.RELU, (src,)))
        return lid

    x, cin = INPUT, input_channels
    for b, cout in enumerate(channels):
        p = f"b{b}."
        h = relu(p + "relu1", conv(p + "conv1", x, cin, cout, 3))
        h = relu(p + "relu2", conv(p + "conv2", h, cout, cout, 3))
        h = conv(p + "conv3", h, cout, cout, 3, stride)
        skip = conv(p + "skip", x, cin, cout, 1, stride)
        nodes.append(Layer(p + "add", LayerKind.ADD, (h, skip)))
        x = relu(p + "relu_out", p + "add")
        if downsampling is Downsampling.MAXPOOL:
            nodes.append(Layer(p + "pool", LayerKind.MAXPOOL2X2, (x,)))
            x = p + "pool"
        cin = cout
    nodes.append(Layer("gap", LayerKind.GLOBAL_AVG_POOL, (x,)))
    return infer_shapes(Graph(tuple(nodes), (input_channels, resolution, resolution), name=name))
