"""Lowering a folded graph to a tiled weight-stationary instruction stream."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, NamedTuple, Optional, Tuple

from ..errors import LoweringError
from ..nn_ir.graph import Graph, LayerKind
from .arch import ACCUMULATOR_BYTES, ArchConfig, parse_arch

PROGRAM_FORMAT = "fsl-program"
PROGRAM_VERSION = 1


class InstrKind(str, Enum):
    LOAD_WEIGHT_TILE = "LoadWeightTile"
    STREAM_MATMUL_TILE = "StreamMatmulTile"
    APPLY_BIAS_RELU = "ApplyBiasRelu"
    MAXPOOL = "MaxPoolOp"
    AVGPOOL = "AvgPoolOp"
    COPY = "CopyOp"


class Instruction(NamedTuple):
    """One array instruction.

    Tile instructions use the ``m0/m``, ``k0/k``, ``n0/n`` offset/extent
    fields of the layer's matmul; element-wise ones use ``elements``.
    ``ApplyBiasRelu`` on a conv is its write-back (bias, round, saturate); on a
    ReLU layer it is the activation. ``CopyOp`` on an Add moves the skip
    operand into the main path with a saturating accumulate.
    """

    kind: InstrKind
    layer: str
    m0: int = 0
    m: int = 0
    k0: int = 0
    k: int = 0
    n0: int = 0
    n: int = 0
    elements: int = 0


_ELEMENTWISE = {
    LayerKind.RELU: InstrKind.APPLY_BIAS_RELU,
    LayerKind.MAXPOOL2X2: InstrKind.MAXPOOL,
    LayerKind.ADD: InstrKind.COPY,
    LayerKind.GLOBAL_AVG_POOL: InstrKind.AVGPOOL,
}


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class LayerPlan:
    layer_id: str
    kind: LayerKind
    # matmul geometry (zero for element-wise layers)
    M: int = 0
    K: int = 0
    N: int = 0
    tile: int = 0
    # element count of the write-back / element-wise op
    elements: int = 0

    @property
    def is_matmul(self) -> bool:
        return self.kind is LayerKind.CONV2D

    @property
    def tile_counts(self) -> Tuple[int, int, int]:
        if not self.is_matmul:
            return (0, 0, 0)
        a = self.tile
        return ceil_div(self.M, a), ceil_div(self.K, a), ceil_div(self.N, a)

    @property
    def num_tiles(self) -> int:
        tm, tk, tn = self.tile_counts
        return tm * tk * tn

    def instructions(self) -> Iterator[Instruction]:
        if self.is_matmul:
            a = self.tile
            for n0 in range(0, self.N, a):
                n = min(a, self.N - n0)
                for m0 in range(0, self.M, a):
                    m = min(a, self.M - m0)
                    for k0 in range(0, self.K, a):
                        k = min(a, self.K - k0)
                        yield Instruction(InstrKind.LOAD_WEIGHT_TILE, self.layer_id, 0, 0, k0, k, n0, n)
                        yield Instruction(InstrKind.STREAM_MATMUL_TILE, self.layer_id, m0, m, k0, k, n0, n)
            yield Instruction(InstrKind.APPLY_BIAS_RELU, self.layer_id, elements=self.elements)
        else:
            yield Instruction(_ELEMENTWISE[self.kind], self.layer_id, elements=self.elements)

    def to_dict(self) -> Dict[str, Any]:
        tm, tk, tn = self.tile_counts
        return {"layer_id": self.layer_id, "kind": self.kind.value, "M": self.M, "K": self.K,
                "N": self.N, "tiles": [tm, tk, tn], "elements": self.elements}


@dataclass(frozen=True)
class Program:
    graph: Graph
    arch: ArchConfig
    plans: Tuple[LayerPlan, ...]

    @property
    def arch_hash(self) -> str:
        return self.arch.hash

    @property
    def graph_id(self) -> str:
        return hashlib.sha256(self.graph.to_json().encode()).hexdigest()[:16]

    def iter_instructions(self) -> Iterator[Instruction]:
        for p in self.plans:
            yield from p.instructions()

    @property
    def instructions(self) -> List[Instruction]:
        return list(self.iter_instructions())

    def to_dict(self, include_instructions: bool = True) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "format": PROGRAM_FORMAT,
            "version": PROGRAM_VERSION,
            "graph_id": self.graph_id,
            "arch_hash": self.arch_hash,
            "arch": self.arch.to_dict(),
            "graph": self.graph.to_dict(),
            "layers": [p.to_dict() for p in self.plans],
        }
        if include_instructions:
            # compact rows: [kind, layer, m0, m, k0, k, n0, n, elements]
            d["instructions"] = [[i.kind.value, *i[1:]] for i in self.iter_instructions()]
        return d

    def to_json(self, include_instructions: bool = True) -> str:
        return json.dumps(self.to_dict(include_instructions), separators=(",", ":"), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Program":
        if d.get("format") != PROGRAM_FORMAT or d.get("version") != PROGRAM_VERSION:
            raise LoweringError("not a version-1 program document")
        arch = parse_arch(d["arch"])
        if arch.hash != d.get("arch_hash"):
            raise LoweringError("program arch_hash does not match its embedded architecture")
        program = lower(Graph.from_dict(d["graph"]), arch)
        if [p.to_dict() for p in program.plans] != list(d["layers"]):
            raise LoweringError("program layer plans do not match a fresh lowering of its graph")
        if "instructions" in d:
            expect = [[i.kind.value, *i[1:]] for i in program.iter_instructions()]
            if expect != [list(r) for r in d["instructions"]]:
                raise LoweringError("program instruction stream does not match its layer plans")
        return program

    @classmethod
    def from_json(cls, text: str) -> "Program":
        return cls.from_dict(json.loads(text))


def _check_tile_memory(layer_id: str, m: int, k: int, n: int, arch: ArchConfig) -> None:
    bpe = arch.data_format.bytes_per_element
    local = (k * n + m * k) * bpe
    acc = m * n * ACCUMULATOR_BYTES
    if local > arch.local_memory_kib * 1024:
        raise LoweringError(
            f"memory-infeasible tile in {layer_id}: {local} B of operands > {arch.local_memory_kib} KiB local memory")
    if acc > arch.accumulator_memory_kib * 1024:
        raise LoweringError(
            f"memory-infeasible tile in {layer_id}: {acc} B of accumulators > "
            f"{arch.accumulator_memory_kib} KiB accumulator memory")


def lower(graph: Graph, arch: ArchConfig) -> Program:
    """im2col-lower every conv to an (M x K) @ (K x N) matmul tiled at the array size."""
    if graph.shapes is None:
        raise LoweringError("graph must be shape-inferred before lowering")
    a = arch.array_size
    plans: List[LayerPlan] = []
    for node in graph.nodes:
        out_c, out_h, out_w = graph.shape_of(node.id)
        if node.kind is LayerKind.CONV2D:
            M, K, N = out_h * out_w, node.in_channels * node.kernel ** 2, out_c
            _check_tile_memory(node.id, min(a, M), min(a, K), min(a, N), arch)
            plans.append(LayerPlan(node.id, node.kind, M, K, N, a, elements=M * N))
        elif node.kind in _ELEMENTWISE:
            if node.kind in (LayerKind.MAXPOOL2X2, LayerKind.GLOBAL_AVG_POOL):
                c, h, w = graph.shape_of(node.inputs[0])
                elements = c * h * w
            else:
                elements = out_c * out_h * out_w
            plans.append(LayerPlan(node.id, node.kind, tile=a, elements=elements))
        else:
            raise LoweringError(f"unsupported layer kind {node.kind.value} ({node.id}); fold batch norms first")
    return Program(graph, arch, tuple(plans))


def find_plan(program: Program, layer_id: str) -> Optional[LayerPlan]:
    for p in program.plans:
        if p.layer_id == layer_id:
            return p
    return None
