"""Backbone IR: construction, shape inference, complexity, BN folding, weight files."""

from .analysis import ComplexityReport, LayerCost, complexity
from .backbone import BackboneSpec, Depth, Downsampling, build_backbone, build_residual_net
from .fold import fold_batchnorm, strip_batchnorm
from .graph import INPUT, Graph, Layer, LayerKind, infer_shapes
from .weights import init_weights, quantize_weights, read_weights, write_weights

__all__ = [
    "BackboneSpec", "ComplexityReport", "Depth", "Downsampling", "Graph", "INPUT", "Layer",
    "LayerCost", "LayerKind", "build_backbone", "build_residual_net", "complexity",
    "fold_batchnorm", "strip_batchnorm", "infer_shapes", "init_weights", "quantize_weights", "read_weights",
    "write_weights",
]
