from .arch import BASE_8X8, DEMONSTRATOR, ArchConfig, DataFormat, parse_arch
from .cost import CycleReport, estimate_cycles, instruction_cycles, plan_cycles
from .program import Instruction, InstrKind, LayerPlan, Program, lower

__all__ = [
    "ArchConfig", "BASE_8X8", "CycleReport", "DEMONSTRATOR", "DataFormat", "Instruction",
    "InstrKind", "LayerPlan", "Program", "estimate_cycles", "instruction_cycles", "lower",
    "parse_arch", "plan_cycles",
]
