from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsl_pipeline.errors import QuantizationError, SimulationError
from fsl_pipeline.nn_ir import INPUT, BackboneSpec, Graph, Layer, LayerKind, build_backbone, \
    build_residual_net, fold_batchnorm, infer_shapes, init_weights, quantize_weights
from fsl_pipeline.numerics import (Q8_8, FixedFormat, MacCounter, QTensor, dequantize, div_round_even,
                                   execute_reference, quantize, round_shift)


def test_format_constants():
    assert Q8_8.fractional_bits == 8 and Q8_8.scale == 256
    assert Q8_8.min_value == -128.0
    assert Q8_8.max_value == 127.99609375


@pytest.mark.parametrize("x, raw", [(1.0, 256), (-0.5, -128), (300.0, 32767), (-300.0, -32768),
                                    (1 / 512, 0), (3 / 512, 2), (-1 / 512, 0)])
def test_quantize_examples(x, raw):
    assert quantize(x) == raw


@pytest.mark.parametrize("raw, x", [(256, 1.0), (-32768, -128.0), (1, 0.00390625)])
def test_dequantize_examples(raw, x):
    assert dequantize(raw) == x


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_quantize_rejects_non_finite(bad):
    with pytest.raises(QuantizationError):
        quantize(bad)
    with pytest.raises(QuantizationError):
        quantize(np.array([0.0, bad]))


@given(st.floats(min_value=-128.0, max_value=127.99609375, allow_nan=False))
def test_round_trip_half_ulp(x):
    assert abs(x - dequantize(quantize(x))) <= 2.0 ** -9


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert quantize(lo) <= quantize(hi)


def _rne_oracle(num: int, den: int) -> int:
    # Python's round() on a Fraction is round-half-to-even
    return round(Fraction(num, den))


@given(st.integers(-(1 << 40), 1 << 40), st.integers(0, 16))
def test_round_shift_matches_fraction_oracle(acc, shift):
    assert int(round_shift(acc, shift)) == _rne_oracle(acc, 1 << shift)


@given(st.integers(-(1 << 40), 1 << 40), st.integers(1, 10_000))
def test_div_round_even_matches_fraction_oracle(num, den):
    assert int(div_round_even(num, den)) == _rne_oracle(num, den)


def test_other_formats():
    q4 = FixedFormat(16, 4)
    assert q4.scale == 4096 and q4.max_value == pytest.approx(8 - 2 ** -12)
    with pytest.raises(QuantizationError):
        FixedFormat(16, 17)


def test_qtensor_rejects_out_of_range_raw():
    with pytest.raises(QuantizationError):
        QTensor(np.array([40000]))


# -- reference executor ----------------------------------------------------

def _one_conv(cin, cout, k=1, res=5):
    layer = Layer("c", LayerKind.CONV2D, (INPUT,), {"in_channels": cin, "out_channels": cout, "kernel": k})
    return infer_shapes(Graph((layer,), (cin, res, res)))


def test_identity_conv_float(rng):
    g = _one_conv(4, 4)
    w = {"c.weight": np.eye(4).reshape(4, 4, 1, 1), "c.bias": np.zeros(4)}
    x = rng.standard_normal((4, 5, 5))
    np.testing.assert_array_equal(execute_reference(g, w, x), x)


def test_identity_conv_fixed(rng):
    g = _one_conv(4, 4)
    w = quantize_weights({"c.weight": np.eye(4).reshape(4, 4, 1, 1), "c.bias": np.zeros(4)})
    x = QTensor(rng.integers(-32768, 32768, (4, 5, 5)).astype(np.int16))
    assert execute_reference(g, w, x, "fixed") == x


def test_float_backbone_features(rng):
    g = build_backbone(BackboneSpec(9, 16, "strided", 32))
    fg, fw = fold_batchnorm(g, init_weights(g, seed=3))
    y = execute_reference(fg, fw, rng.standard_normal((3, 32, 32)))
    assert y.shape == (64,) and np.all(np.isfinite(y))


def test_fixed_zero_input_gives_zero_features():
    g = build_backbone(BackboneSpec(9, 8, "maxpool", 16))
    fg, fw = fold_batchnorm(g, init_weights(g, seed=3))
    qw = quantize_weights({k: (np.zeros_like(v) if k.endswith(".bias") else v) for k, v in fw.items()})
    y = execute_reference(fg, qw, QTensor(np.zeros((3, 16, 16), np.int16)), "fixed")
    assert y.shape == (32,) and not y.raw.any()


def test_fixed_conv_rounds_once_at_writeback():
    g = _one_conv(2, 1)
    # 0.5 * 0.5078125 + 0.5 * 0.5078125 = 0.5078125 exactly; single products would round differently
    w = {"c.weight": QTensor(np.array([[[[128]], [[128]]]], np.int16)), "c.bias": QTensor(np.zeros(1, np.int16))}
    x = QTensor(np.full((2, 5, 5), 130, np.int16))
    y = execute_reference(g, w, x, "fixed")
    assert np.all(y.raw == 130)


def test_fixed_saturates_on_overflow():
    g = _one_conv(1, 1)
    w = {"c.weight": QTensor(np.array([[[[quantize(100.0)]]]], np.int16))}
    y = execute_reference(g, w, QTensor(np.full((1, 5, 5), quantize(100.0), np.int16)), "fixed")
    assert np.all(y.raw == 32767)
    y = execute_reference(g, w, QTensor(np.full((1, 5, 5), quantize(-100.0), np.int16)), "fixed")
    assert np.all(y.raw == -32768)


def test_fixed_global_pool_rounds_half_even():
    g = infer_shapes(Graph((Layer("gap", LayerKind.GLOBAL_AVG_POOL, (INPUT,)),), (2, 1, 2)))
    # sums 1 and 3 over 2 elements -> 0.5 and 1.5 -> 0 and 2
    y = execute_reference(g, {}, QTensor(np.array([[[0, 1]], [[1, 2]]], np.int16)), "fixed")
    assert y.raw.tolist() == [0, 2]


def test_fixed_vs_float_agreement(rng):
    worst = 0.0
    for _ in range(10):
        g = build_residual_net([int(rng.integers(2, 6)), int(rng.integers(4, 10))],
                               "strided" if rng.integers(2) else "maxpool", int(rng.integers(8, 17)))
        fg, fw = fold_batchnorm(g, init_weights(g, seed=int(rng.integers(1 << 30))))
        x = rng.uniform(-4, 4, fg.input_shape)
        ref = execute_reference(fg, fw, x)
        assert np.max(np.abs(ref)) < 100  # stays inside Q8.8 range
        fixed = execute_reference(fg, quantize_weights(fw), QTensor.from_float(x), "fixed")
        worst = max(worst, float(np.max(np.abs(fixed.to_float() - ref))))
    assert worst <= 0.1


def test_mac_counter_matches_formula(rng):
    from fsl_pipeline.nn_ir import complexity
    g = build_backbone(BackboneSpec(12, 3, "maxpool", 21))
    fg, fw = fold_batchnorm(g, init_weights(g))
    counter = MacCounter()
    execute_reference(fg, fw, rng.standard_normal(fg.input_shape), mac_counter=counter)
    rep = complexity(fg)
    assert counter.total == rep.mac_count
    assert counter.per_layer == {c.layer_id: c.macs for c in rep.per_layer if c.macs}


def test_executor_errors(rng):
    g = _one_conv(2, 2)
    with pytest.raises(SimulationError, match="missing weight"):
        execute_reference(g, {}, rng.standard_normal((2, 5, 5)))
    with pytest.raises(SimulationError):
        execute_reference(g, {"c.weight": np.ones((2, 2, 1, 1))}, QTensor(np.zeros((2, 5, 5), np.int16)), "fixed")
    with pytest.raises(Exception, match="shape"):
        execute_reference(g, {"c.weight": np.ones((2, 2, 1, 1))}, np.zeros((2, 4, 4)))
