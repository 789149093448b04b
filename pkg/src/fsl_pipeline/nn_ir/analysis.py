"""Parameter and multiply-accumulate accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from .graph import Graph, LayerKind


@dataclass(frozen=True)
class LayerCost:
    layer_id: str
    kind: str
    params: int
    macs: int


@dataclass(frozen=True)
class ComplexityReport:
    parameter_count: int
    mac_count: int
    per_layer: Tuple[LayerCost, ...]

    def to_csv(self) -> str:
        lines = ["layer_id,layer_kind,params,macs"]
        lines += [f"{c.layer_id},{c.kind},{c.params},{c.macs}" for c in self.per_layer]
        lines.append(f"total,,{self.parameter_count},{self.mac_count}")
        return "\n".join(lines) + "\n"


def conv_macs(out_h: int, out_w: int, out_c: int, in_c: int, kernel: int) -> int:
    return out_h * out_w * out_c * in_c * kernel * kernel


def complexity(graph: Graph) -> ComplexityReport:
    """MACs and parameters of one forward pass.

    Only Conv2D layers count: params include a bias per output channel (the
    one BN folding creates), and ReLU/pool/add/BN contribute nothing.
    """
    per_layer = []
    for n in graph.nodes:
        params = macs = 0
        if n.kind is LayerKind.CONV2D:
            out_c, out_h, out_w = graph.shape_of(n.id)
            macs = conv_macs(out_h, out_w, out_c, n.in_channels, n.kernel)
            params = out_c * n.in_channels * n.kernel ** 2 + out_c
        per_layer.append(LayerCost(n.id, n.kind.value, params, macs))
    return ComplexityReport(
        parameter_count=sum(c.params for c in per_layer),
        mac_count=sum(c.macs for c in per_layer),
        per_layer=tuple(per_layer),
    )
