"""Trusted reference executor, float or fixed-point.

Convolutions run as direct sliding-window accumulation, one (tap, input
channel) step at a time. This path is deliberately unlike the accelerator's
im2col + tiled matmul so the two can check each other.
"""

from __future__ import annotations

from enum import Enum
from typing import Dict, Mapping, Optional, Union

import numpy as np

from ..errors import GraphError, ShapeMismatchError, SimulationError
from ..nn_ir.graph import INPUT, Graph, Layer, LayerKind
from .fixed import Q8_8, QTensor, align_bias, div_round_even, requantize_accumulator, saturate


class ExecMode(str, Enum):
    FLOAT = "float"
    FIXED = "fixed"


class MacCounter:
    """Counts multiply-accumulates actually performed by the executor."""

    def __init__(self):
        self.total = 0
        self.per_layer: Dict[str, int] = {}

    def add(self, layer_id: str, n: int) -> None:
        self.total += n
        self.per_layer[layer_id] = self.per_layer.get(layer_id, 0) + n


def _tensor(weights: Mapping, name: str, mode: ExecMode):
    try:
        t = weights[name]
    except KeyError:
        raise SimulationError(f"missing weight tensor {name!r}") from None
    if mode is ExecMode.FIXED:
        if not isinstance(t, QTensor):
            raise SimulationError(f"{name!r} must be a QTensor in fixed mode")
        return t.raw.astype(np.int64)
    if isinstance(t, QTensor):
        raise SimulationError(f"{name!r} is quantized but mode is float")
    return np.asarray(t, dtype=np.float64)


def _conv(n: Layer, x: np.ndarray, weights: Mapping, mode: ExecMode, fmt, counter):
    w = _tensor(weights, f"{n.id}.weight", mode)
    cout, cin, k, k2 = w.shape
    if (cout, cin, k, k2) != (n.out_channels, n.in_channels, n.kernel, n.kernel):
        raise ShapeMismatchError(f"{n.id}.weight has shape {w.shape}")
    bias_name = f"{n.id}.bias"
    if bias_name in weights:
        b = _tensor(weights, bias_name, mode)
    else:
        b = np.zeros(cout, dtype=np.int64 if mode is ExecMode.FIXED else np.float64)
    s, p = n.stride, n.padding
    _, h, wd = x.shape
    oh, ow = (h + 2 * p - k) // s + 1, (wd + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    acc = np.zeros((cout, oh, ow), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            window = xp[:, dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s]
            for c in range(cin):
                acc += w[:, c, dy, dx][:, None, None] * window[c][None, :, :]
                if counter is not None:
                    counter.add(n.id, cout * oh * ow)
    if mode is ExecMode.FIXED:
        return requantize_accumulator(acc + align_bias(b, fmt)[:, None, None], fmt).astype(np.int64)
    return acc + b[:, None, None]


def _maxpool(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    fill = np.iinfo(x.dtype).min if x.dtype.kind == "i" else -np.inf
    xp = np.full((c, h + h % 2, w + w % 2), fill, dtype=x.dtype)
    xp[:, :h, :w] = x
    return xp.reshape(c, xp.shape[1] // 2, 2, xp.shape[2] // 2, 2).max(axis=(2, 4))


def execute_reference(graph: Graph, weights: Mapping, input, mode: Union[ExecMode, str] = ExecMode.FLOAT,
                      fmt=Q8_8, mac_counter: Optional[MacCounter] = None):
    """Run ``graph`` on one input (C, H, W) and return its output.

    Graphs ending in GlobalAvgPool return the flat feature vector. Fixed mode
    expects QTensor weights/input and returns a QTensor; float mode returns a
    float64 array.
    """
    mode = ExecMode(mode)
    if graph.has_kind(LayerKind.BATCHNORM):
        raise GraphError("fold batch norms before execution")
    if graph.shapes is None:
        raise GraphError("graph must be shape-inferred")
    if mode is ExecMode.FIXED:
        if not isinstance(input, QTensor):
            raise SimulationError("fixed mode expects a QTensor input")
        x0 = input.raw.astype(np.int64)
    else:
        x0 = np.asarray(input.to_float() if isinstance(input, QTensor) else input, dtype=np.float64)
    if tuple(x0.shape) != graph.input_shape:
        raise ShapeMismatchError(f"input shape {x0.shape} != graph input {graph.input_shape}")

    vals: Dict[str, np.ndarray] = {INPUT: x0}
    for n in graph.nodes:
        x = vals[n.inputs[0]]
        if n.kind is LayerKind.CONV2D:
            y = _conv(n, x, weights, mode, fmt, mac_counter)
        elif n.kind is LayerKind.RELU:
            y = np.maximum(x, 0)
        elif n.kind is LayerKind.MAXPOOL2X2:
            y = _maxpool(x)
        elif n.kind is LayerKind.ADD:
            y = x + vals[n.inputs[1]]
            if mode is ExecMode.FIXED:
                y = saturate(y, fmt).astype(np.int64)
        elif n.kind is LayerKind.GLOBAL_AVG_POOL:
            count = x.shape[1] * x.shape[2]
            if mode is ExecMode.FIXED:
                y = div_round_even(x.sum(axis=(1, 2)), count)[:, None, None]
            else:
                y = x.mean(axis=(1, 2))[:, None, None]
        else:
            raise GraphError(f"reference executor cannot run {n.kind.value}")
        vals[n.id] = y

    out = vals[graph.output]
    if graph.nodes and graph.nodes[-1].kind is LayerKind.GLOBAL_AVG_POOL:
        out = out.reshape(-1)
    if mode is ExecMode.FIXED:
        return QTensor(out.astype(np.int16), fmt)
    return out
