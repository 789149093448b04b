"""Layer-graph IR for backbone networks.

A graph is an ordered list of layers; the order is a topological order and
every layer names its producers by id. The graph input is the pseudo-producer
``"input"``. Shapes are ``(channels, height, width)`` and are attached per
producer by :func:`infer_shapes` (each edge carries its producer's shape).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from ..errors import GraphError, ShapeMismatchError

GRAPH_FORMAT = "fsl-graph"
GRAPH_VERSION = 1
INPUT = "input"

Shape = Tuple[int, int, int]


class LayerKind(str, Enum):
    CONV2D = "Conv2D"
    BATCHNORM = "BatchNorm"
    RELU = "ReLU"
    MAXPOOL2X2 = "MaxPool2x2"
    ADD = "Add"
    GLOBAL_AVG_POOL = "GlobalAvgPool"


_ARITY = {LayerKind.ADD: 2}


@dataclass(frozen=True)
class Layer:
    id: str
    kind: LayerKind
    inputs: Tuple[str, ...]
    attrs: Mapping[str, Any] = field(default_factory=dict)

    @property
    def kernel(self) -> int:
        return int(self.attrs["kernel"])

    @property
    def stride(self) -> int:
        return int(self.attrs.get("stride", 1))

    @property
    def padding(self) -> int:
        # "same"-style padding: k // 2 on every side
        return self.kernel // 2

    @property
    def in_channels(self) -> int:
        return int(self.attrs["in_channels"])

    @property
    def out_channels(self) -> int:
        return int(self.attrs["out_channels"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "inputs": list(self.inputs),
            "attrs": dict(sorted(self.attrs.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Layer":
        try:
            kind = LayerKind(d["kind"])
        except ValueError:
            raise GraphError(f"unsupported layer kind {d['kind']!r}") from None
        return cls(id=str(d["id"]), kind=kind, inputs=tuple(d["inputs"]),
                   attrs=dict(d.get("attrs", {})))


def conv_out_size(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def pool_out_size(size: int) -> int:
    return -(-size // 2)


@dataclass(frozen=True)
class Graph:
    nodes: Tuple[Layer, ...]
    input_shape: Shape
    shapes: Optional[Mapping[str, Shape]] = None
    name: str = "graph"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        _validate_structure(self)

    @property
    def edges(self) -> List[Tuple[str, str]]:
        return [(src, n.id) for n in self.nodes for src in n.inputs]

    @property
    def output(self) -> str:
        return self.nodes[-1].id if self.nodes else INPUT

    @property
    def output_shape(self) -> Shape:
        return self.shape_of(self.output)

    @property
    def output_dim(self) -> int:
        return self.output_shape[0]

    def layer(self, layer_id: str) -> Layer:
        for n in self.nodes:
            if n.id == layer_id:
                return n
        raise KeyError(layer_id)

    def shape_of(self, producer: str) -> Shape:
        if producer == INPUT:
            return self.input_shape
        if self.shapes is None:
            raise GraphError("graph is not shape-inferred")
        return self.shapes[producer]

    def consumers(self, producer: str) -> List[Layer]:
        return [n for n in self.nodes if producer in n.inputs]

    def has_kind(self, kind: LayerKind) -> bool:
        return any(n.kind is kind for n in self.nodes)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "format": GRAPH_FORMAT,
            "version": GRAPH_VERSION,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }
        if self.shapes is not None:
            d["shapes"] = {k: list(v) for k, v in self.shapes.items()}
            d["output_dim"] = self.output_dim
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Graph":
        if d.get("format") != GRAPH_FORMAT:
            raise GraphError(f"not a graph document (format={d.get('format')!r})")
        if d.get("version") != GRAPH_VERSION:
            raise GraphError(f"unsupported graph version {d.get('version')!r}")
        nodes = tuple(Layer.from_dict(n) for n in d["nodes"])
        g = cls(nodes=nodes, input_shape=tuple(d["input_shape"]), name=d.get("name", "graph"))
        declared = sorted(tuple(e) for e in d.get("edges", g.edges))
        if declared != sorted(g.edges):
            raise GraphError("edge list disagrees with node inputs")
        # Shapes are always recomputed rather than trusted.
        return infer_shapes(g) if "shapes" in d else g

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))


def _validate_structure(g: Graph) -> None:
    seen = {INPUT}
    consumed = set()
    for n in g.nodes:
        if n.id in seen:
            raise GraphError(f"duplicate layer id {n.id!r}")
        want = _ARITY.get(n.kind, 1)
        if len(n.inputs) != want:
            raise GraphError(f"{n.kind.value} {n.id!r} takes {want} input(s), got {len(n.inputs)}")
        for src in n.inputs:
            if src not in seen:
                # also catches cycles, since nodes must be listed in topological order
                raise GraphError(f"{n.id!r} consumes {src!r} before it is produced")
            consumed.add(src)
        if n.kind is LayerKind.CONV2D:
            _check_conv_attrs(n)
        seen.add(n.id)
    if g.nodes:
        dangling = [n.id for n in g.nodes[:-1] if n.id not in consumed]
        if dangling:
            raise GraphError(f"graph has more than one output: {dangling + [g.output]}")
        if INPUT not in consumed:
            raise GraphError("graph input is never consumed")


def _check_conv_attrs(n: Layer) -> None:
    for key in ("in_channels", "out_channels", "kernel"):
        if key not in n.attrs:
            raise GraphError(f"Conv2D {n.id!r} missing attribute {key!r}")
    if n.kernel not in (1, 3):
        raise GraphError(f"Conv2D {n.id!r}: kernel must be 1 or 3, got {n.kernel}")
    if n.stride not in (1, 2):
        raise GraphError(f"Conv2D {n.id!r}: stride must be 1 or 2, got {n.stride}")
    if n.in_channels < 1 or n.out_channels < 1:
        raise GraphError(f"Conv2D {n.id!r}: channel counts must be positive")


def infer_shapes(graph: Graph) -> Graph:
    """Return a copy of ``graph`` with every producer's output shape attached."""
    shapes: Dict[str, Shape] = {INPUT: graph.input_shape}
    for n in graph.nodes:
        ins = [shapes[s] for s in n.inputs]
        c, h, w = ins[0]
        if n.kind is LayerKind.CONV2D:
            if c != n.in_channels:
                raise ShapeMismatchError(
                    f"{n.id}: expects {n.in_channels} input channels, got {c}")
            out = (n.out_channels, conv_out_size(h, n.kernel, n.stride),
                   conv_out_size(w, n.kernel, n.stride))
        elif n.kind is LayerKind.BATCHNORM:
            if "channels" in n.attrs and int(n.attrs["channels"]) != c:
                raise ShapeMismatchError(f"{n.id}: BatchNorm over {n.attrs['channels']} channels, got {c}")
            out = (c, h, w)
        elif n.kind is LayerKind.RELU:
            out = (c, h, w)
        elif n.kind is LayerKind.MAXPOOL2X2:
            out = (c, pool_out_size(h), pool_out_size(w))
        elif n.kind is LayerKind.ADD:
            if ins[0] != ins[1]:
                raise ShapeMismatchError(f"{n.id}: Add operands {ins[0]} and {ins[1]} differ")
            out = ins[0]
        elif n.kind is LayerKind.GLOBAL_AVG_POOL:
            out = (c, 1, 1)
        else:  # pragma: no cover - LayerKind is closed
            raise GraphError(f"unsupported layer kind {n.kind}")
        shapes[n.id] = out
    del shapes[INPUT]
    return replace(graph, shapes=shapes)


def rewire(nodes: Sequence[Layer], old: str, new: str) -> List[Layer]:
    """Point every consumer of ``old`` at ``new``."""
    out = []
    for n in nodes:
        if old in n.inputs:
            n = replace(n, inputs=tuple(new if s == old else s for s in n.inputs))
        out.append(n)
    return out
