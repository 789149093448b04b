import numpy as np
import pytest

from fsl_pipeline.nn_ir import build_residual_net, fold_batchnorm, init_weights, quantize_weights
from fsl_pipeline.numerics import QTensor


def random_folded_net(rng, max_blocks=3, max_fm=6, max_res=14, gain=1.0):
    """A small random residual net, BN-folded, with float weights."""
    blocks = int(rng.integers(1, max_blocks + 1))
    fm = int(rng.integers(1, max_fm + 1))
    channels = [fm * 2 ** i for i in range(blocks)]
    res = int(rng.integers(2 ** blocks, max(2 ** blocks, max_res) + 1))
    down = "strided" if rng.integers(2) else "maxpool"
    cin = int(rng.integers(1, 4))
    g = build_residual_net(channels, down, res, cin)
    return fold_batchnorm(g, init_weights(g, seed=int(rng.integers(1 << 31)), gain=gain))


def random_fixed_case(rng, **kw):
    graph, w = random_folded_net(rng, **kw)
    qw = quantize_weights(w)
    x = QTensor.from_float(rng.uniform(-2.0, 2.0, graph.input_shape))
    return graph, qw, x


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, dur in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}  ({dur:.2f}s)")
