"""Weight-stationary cycle model.

Per matmul tile (m streamed rows, k x n weights on an A x A array)::

    A            weight tile load
    + m          activation rows streamed
    + 2(A - 1)   pipeline fill and drain

Element-wise instructions process A elements per cycle. Memory stalls are not
modeled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from ..errors import ArchError
from .arch import ArchConfig
from .program import Instruction, InstrKind, LayerPlan, Program, ceil_div


def instruction_cycles(instr: Instruction, array_size: int) -> int:
    """Cost of one instruction. The simulator and the estimator both use this."""
    if instr.kind is InstrKind.LOAD_WEIGHT_TILE:
        return array_size
    if instr.kind is InstrKind.STREAM_MATMUL_TILE:
        return instr.m + 2 * (array_size - 1)
    return ceil_div(instr.elements, array_size)


def plan_cycles(plan: LayerPlan) -> int:
    """Closed-form sum of :func:`instruction_cycles` over a layer's instructions."""
    a = plan.tile
    if not plan.is_matmul:
        return ceil_div(plan.elements, a)
    tm, tk, tn = plan.tile_counts
    # every (n, k) column of tiles streams all M rows once; every tile pays load + fill/drain
    tiles = tn * tk * (tm * (a + 2 * (a - 1)) + plan.M)
    return tiles + ceil_div(plan.elements, a)


@dataclass(frozen=True)
class CycleReport:
    total_cycles: int
    per_layer: Tuple[Tuple[str, str, int], ...]
    clock_mhz: float

    @property
    def latency_ms(self) -> float:
        return self.total_cycles / (self.clock_mhz * 1e3)

    def to_csv(self) -> str:
        lines = ["layer_id,layer_kind,cycles"]
        lines += [f"{lid},{kind},{c}" for lid, kind, c in self.per_layer]
        return "\n".join(lines) + "\n"


def estimate_cycles(program: Program, arch: ArchConfig) -> CycleReport:
    if program.arch_hash != arch.hash:
        raise ArchError(f"arch mismatch: program compiled for {program.arch_hash}, got {arch.hash}")
    per_layer = []
    for p in program.plans:
        per_layer.append((p.layer_id, p.kind.value, plan_cycles(p)))
    return CycleReport(sum(c for _, _, c in per_layer), tuple(per_layer), arch.clock_mhz)
