"""Batch-norm folding into the preceding convolution."""

from __future__ import annotations

from typing import Dict, Mapping, Tuple

import numpy as np

from ..errors import GraphError
from .graph import Graph, LayerKind, infer_shapes, rewire


def _bn_pairs(graph: Graph):
    by_id = {n.id: n for n in graph.nodes}
    for bn in graph.nodes:
        if bn.kind is not LayerKind.BATCHNORM:
            continue
        src = bn.inputs[0]
        conv = by_id.get(src)
        if conv is None or conv.kind is not LayerKind.CONV2D:
            raise GraphError(f"orphan BatchNorm {bn.id!r}: input {src!r} is not a Conv2D")
        if len(graph.consumers(src)) != 1:
            raise GraphError(f"cannot fold {bn.id!r}: {src!r} has other consumers")
        yield conv, bn


def strip_batchnorm(graph: Graph) -> Graph:
    """The graph half of :func:`fold_batchnorm`: drop each BN and rewire to its conv."""
    nodes = list(graph.nodes)
    for conv, bn in list(_bn_pairs(graph)):
        nodes = rewire([n for n in nodes if n.id != bn.id], bn.id, conv.id)
    return infer_shapes(Graph(tuple(nodes), graph.input_shape, name=graph.name))


def fold_batchnorm(graph: Graph, weights: Mapping[str, np.ndarray]) -> Tuple[Graph, Dict[str, np.ndarray]]:
    """Merge every Conv2D -> BatchNorm pair into a single biased Conv2D.

    Weight naming: ``<conv>.weight`` (out, in, k, k), optional ``<conv>.bias``,
    and ``<bn>.gamma/.beta/.mean/.var``. Returns a new graph and a new weight
    dict; the inputs are left untouched.
    """
    out = dict(weights)
    for conv, bn in _bn_pairs(graph):
        src = conv.id
        try:
            w = np.asarray(out[f"{src}.weight"], dtype=np.float64)
            gamma = np.asarray(weights[f"{bn.id}.gamma"], dtype=np.float64)
            beta = np.asarray(weights[f"{bn.id}.beta"], dtype=np.float64)
            mean = np.asarray(weights[f"{bn.id}.mean"], dtype=np.float64)
            var = np.asarray(weights[f"{bn.id}.var"], dtype=np.float64)
        except KeyError as e:
            raise GraphError(f"missing weight tensor {e.args[0]!r}") from None
        b = np.asarray(out.get(f"{src}.bias", np.zeros(w.shape[0])), dtype=np.float64)
        scale = gamma / np.sqrt(var + float(bn.attrs.get("eps", 1e-5)))
        out[f"{src}.weight"] = (w * scale[:, None, None, None]).astype(np.float32)
        out[f"{src}.bias"] = ((b - mean) * scale + beta).astype(np.float32)
        for suffix in ("gamma", "beta", "mean", "var"):
            out.pop(f"{bn.id}.{suffix}", None)
    return strip_batchnorm(graph), out
