"""Functional, cycle-counting simulator for compiled programs.

Each instruction is executed against an A x A array model: weight tiles are
latched, activation rows stream through and accumulate into wide integer (or
float) accumulators, and write-back applies bias, rounding and saturation.
Cycles are counted per instruction with the same cost function the compiler
uses for its estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .compiler.arch import ArchConfig, DataFormat
from .compiler.cost import instruction_cycles
from .compiler.program import InstrKind, Program
from .errors import SimulationError
from .nn_ir.graph import INPUT, LayerKind
from .numerics.fixed import Q8_8, QTensor, align_bias, div_round_even, requantize_accumulator, saturate

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class TraceRow:
    index: int
    kind: str
    cycles: int
    checksum: int


@dataclass(frozen=True)
class SimResult:
    features: object  # QTensor in q8.8 mode, float64 ndarray in float32 mode
    cycles: int
    per_layer_trace: Optional[Tuple[TraceRow, ...]] = None

    def trace_csv(self) -> str:
        if self.per_layer_trace is None:
            raise SimulationError("run was not traced")
        lines = ["instruction_index,kind,cycles,checksum"]
        lines += [f"{r.index},{r.kind},{r.cycles},{r.checksum:016x}" for r in self.per_layer_trace]
        return "\n".join(lines) + "\n"


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(C, H, W) -> (out_h*out_w, C*k*k) patch rows, column order (c, dy, dx)."""
    c, h, w = x.shape
    p = kernel // 2
    oh, ow = (h + 2 * p - kernel) // stride + 1, (w + 2 * p - kernel) // stride + 1
    if kernel == 1:
        return x[:, ::stride, ::stride].reshape(c, oh * ow).T
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = np.empty((c, kernel, kernel, oh, ow), dtype=x.dtype)
    for dy in range(kernel):
        for dx in range(kernel):
            cols[:, dy, dx] = xp[:, dy:dy + stride * (oh - 1) + 1:stride, dx:dx + stride * (ow - 1) + 1:stride]
    return cols.reshape(c * kernel * kernel, oh * ow).T


class _Array:
    """State of the A x A array and its scratchpads during one run."""

    def __init__(self, program: Program, weights: Mapping, x0: np.ndarray, fixed: bool):
        self.program = program
        self.graph = program.graph
        self.weights = weights
        self.fixed = fixed
        self.fmt = Q8_8
        self.buffers: Dict[str, np.ndarray] = {INPUT: x0}
        self.layer = None
        self.patches = None
        self.wmat = None
        self.acc = None
        self.wtile = None

    def _weight(self, name: str) -> np.ndarray:
        t = self.weights[name]
        return t.raw.astype(np.int64) if self.fixed else np.asarray(t, dtype=np.float64)

    def _begin_conv(self, layer_id: str) -> None:
        node = self.graph.layer(layer_id)
        w = self._weight(f"{layer_id}.weight")
        self.layer = node
        self.patches = im2col(self.buffers[node.inputs[0]], node.kernel, node.stride)
        self.wmat = w.reshape(w.shape[0], -1).T  # (K, N)
        self.acc = np.zeros((self.patches.shape[0], w.shape[0]), dtype=np.int64 if self.fixed else np.float64)

    def load_weight_tile(self, ins) -> np.ndarray:
        if self.layer is None or self.layer.id != ins.layer:
            self._begin_conv(ins.layer)
        self.wtile = self.wmat[ins.k0:ins.k0 + ins.k, ins.n0:ins.n0 + ins.n]
        return self.wtile

    def stream_tile(self, ins) -> np.ndarray:
        rows = self.patches[ins.m0:ins.m0 + ins.m, ins.k0:ins.k0 + ins.k]
        if self.wtile is None or self.wtile.shape != (ins.k, ins.n):
            raise SimulationError(f"instruction stream out of order at {ins.layer}")
        out = self.acc[ins.m0:ins.m0 + ins.m, ins.n0:ins.n0 + ins.n]
        out += rows @ self.wtile
        return out

    def writeback(self, layer_id: str) -> np.ndarray:
        if self.layer is None or self.layer.id != layer_id:
            raise SimulationError(f"write-back of {layer_id} before any of its tiles")
        out_c, oh, ow = self.graph.shape_of(layer_id)
        bias_name = f"{layer_id}.bias"
        bias = self._weight(bias_name) if bias_name in self.weights else np.zeros(out_c, dtype=self.acc.dtype)
        if self.fixed:
            y = requantize_accumulator(self.acc + align_bias(bias, self.fmt)[None, :], self.fmt).astype(np.int64)
        else:
            y = self.acc + bias[None, :]
        self.layer = self.patches = self.wmat = self.acc = self.wtile = None
        return y.T.reshape(out_c, oh, ow)

    def elementwise(self, ins) -> np.ndarray:
        node = self.graph.layer(ins.layer)
        x = self.buffers[node.inputs[0]]
        if node.kind is LayerKind.RELU:
            return np.maximum(x, 0)
        if node.kind is LayerKind.ADD:
            y = x + self.buffers[node.inputs[1]]
            return saturate(y, self.fmt).astype(np.int64) if self.fixed else y
        if node.kind is LayerKind.MAXPOOL2X2:
            c, h, w = x.shape
            oh, ow = -(-h // 2), -(-w // 2)
            y = np.empty((c, oh, ow), dtype=x.dtype)
            for i in range(oh):
                for j in range(ow):
                    y[:, i, j] = x[:, 2 * i:2 * i + 2, 2 * j:2 * j + 2].reshape(c, -1).max(axis=1)
            return y
        if node.kind is LayerKind.GLOBAL_AVG_POOL:
            flat = x.reshape(x.shape[0], -1)
            if self.fixed:
                return div_round_even(flat.sum(axis=1), flat.shape[1]).reshape(-1, 1, 1)
            return flat.mean(axis=1).reshape(-1, 1, 1)
        raise SimulationError(f"{ins.kind.value} cannot execute layer kind {node.kind.value}")


def _check_inputs(program: Program, weights: Mapping, arch: ArchConfig, fixed: bool) -> None:
    if program.arch_hash != arch.hash:
        raise SimulationError(f"program/arch mismatch: compiled for {program.arch_hash}, got {arch.hash}")
    for node in program.graph.nodes:
        if node.kind is not LayerKind.CONV2D:
            continue
        for name in (f"{node.id}.weight", f"{node.id}.bias"):
            if name not in weights:
                if name.endswith(".bias"):
                    continue
                raise SimulationError(f"missing weight tensor {name!r}")
            if isinstance(weights[name], QTensor) != fixed:
                raise SimulationError(
                    f"weight/format mismatch: {name!r} vs data_format {arch.data_format.value}")
        w = weights[f"{node.id}.weight"]
        if tuple(w.shape) != (node.out_channels, node.in_channels, node.kernel, node.kernel):
            raise SimulationError(f"{node.id}.weight has shape {tuple(w.shape)}")


def run(program: Program, weights: Mapping, input, arch: ArchConfig, trace: bool = False) -> SimResult:
    fixed = arch.data_format is DataFormat.Q8_8
    _check_inputs(program, weights, arch, fixed)
    if fixed:
        if not isinstance(input, QTensor):
            raise SimulationError("weight/format mismatch: q8.8 arch expects a QTensor input")
        x0 = input.raw.astype(np.int64)
    else:
        if isinstance(input, QTensor):
            raise SimulationError("weight/format mismatch: float32 arch got a QTensor input")
        x0 = np.asarray(input, dtype=np.float64)
    if tuple(x0.shape) != program.graph.input_shape:
        raise SimulationError(f"input shape {x0.shape} != {program.graph.input_shape}")

    array = _Array(program, weights, x0, fixed)
    a = arch.array_size
    cycles = 0
    rows: List[TraceRow] = []
    for idx, ins in enumerate(program.iter_instructions()):
        if ins.kind is InstrKind.LOAD_WEIGHT_TILE:
            touched = array.load_weight_tile(ins)
        elif ins.kind is InstrKind.STREAM_MATMUL_TILE:
            touched = array.stream_tile(ins)
        elif ins.kind is InstrKind.APPLY_BIAS_RELU and array.graph.layer(ins.layer).kind is LayerKind.CONV2D:
            touched = array.buffers[ins.layer] = array.writeback(ins.layer)
        else:
            touched = array.buffers[ins.layer] = array.elementwise(ins)
        c = instruction_cycles(ins, a)
        cycles += c
        if trace:
            data = np.ascontiguousarray(touched, dtype="<i8" if fixed else "<f8").tobytes()
            rows.append(TraceRow(idx, ins.kind.value, c, fnv1a64(data)))

    graph = program.graph
    out = array.buffers[graph.output]
    if graph.nodes and graph.nodes[-1].kind is LayerKind.GLOBAL_AVG_POOL:
        out = out.reshape(-1)
    features = QTensor(out.astype(np.int16), Q8_8) if fixed else out
    return SimResult(features, cycles, tuple(rows) if trace else None)
