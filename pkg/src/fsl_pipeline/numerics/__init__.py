from .fixed import (Q8_8, FixedFormat, QTensor, dequantize, div_round_even, quantize,
                    requantize_accumulator, round_shift, saturate)
from .reference import ExecMode, MacCounter, execute_reference

__all__ = [
    "ExecMode", "FixedFormat", "MacCounter", "Q8_8", "QTensor", "dequantize", "div_round_even",
    "execute_reference", "quantize", "requantize_accumulator", "round_shift", "saturate",
]
