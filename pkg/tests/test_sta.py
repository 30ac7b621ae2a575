import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agingquant.aging import DelayModel, annotate
from agingquant.errors import ParameterError
from agingquant.netlist import build_multiplier, evaluate_nets
from agingquant.sta import (
    SWEEP_COLUMNS, CompressionConfig, Padding, all_configs, analyze, constant_bits, delay_sweep,
    propagate_constants,
)


def brute_longest_path(net, delays, const=frozenset()):
    """Longest input-to-output path by enumerating predecessors recursively."""

    @lru_cache(maxsize=None)
    def arrival(n):
        if n in const:
            return None
        gi = net.driver(n)
        if gi < 0:
            return 0.0
        ins = [arrival(i) for i in net.gates[gi].inputs]
        ins = [t for t in ins if t is not None]
        return max(ins) + delays[gi]

    outs = [arrival(n) for n in net.outputs[net.output_port]]
    return max(t for t in outs if t is not None)


@settings(max_examples=25)
@given(st.integers(2, 5), st.data())
def test_sta_matches_path_oracle(width, data):
    net = build_multiplier(width)
    delays = data.draw(st.lists(st.floats(0.1, 5.0), min_size=len(net.gates), max_size=len(net.gates)))
    assert analyze(net, delays).delay == pytest.approx(brute_longest_path(net, delays), rel=1e-12)


def test_critical_path_is_connected(mac):
    delays = annotate(mac, DelayModel(), 0)
    for cfg in [CompressionConfig(), CompressionConfig(3, 2, Padding.LSB), CompressionConfig(2, 5)]:
        rep = analyze(mac, delays, cfg)
        assert rep.path_delay(delays) == pytest.approx(rep.delay)
        for g0, g1 in zip(rep.critical_path, rep.critical_path[1:]):
            assert mac.gates[g0].output in mac.gates[g1].inputs
        assert mac.gates[rep.critical_path[-1]].output in mac.outputs["O"]


def test_constants_are_sound():
    # Every net the propagation calls constant must be constant over all inputs.
    net = build_multiplier(4)
    a, b = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    for zeros in [{("A", 3)}, {("A", 0), ("B", 0)}, {("A", 2), ("A", 3), ("B", 3)}]:
        keep = np.ones(a.size, dtype=bool)
        for port, bit in zeros:
            keep &= (((a if port == "A" else b).ravel() >> bit) & 1) == 0
        vals = evaluate_nets(net, {"A": a.ravel()[keep], "B": b.ravel()[keep]})
        for n, v in propagate_constants(net, zeros).items():
            assert np.all(vals[n] == v)


def test_constant_bits_layout():
    msb = constant_bits(CompressionConfig(2, 1, Padding.MSB))
    lsb = constant_bits(CompressionConfig(2, 1, Padding.LSB))
    assert msb == {("A", 6), ("A", 7), ("B", 7), ("C", 19), ("C", 20), ("C", 21)}
    assert lsb == {("A", 0), ("A", 1), ("B", 0), ("C", 0), ("C", 1), ("C", 2)}


def test_uncompressed_has_no_constants(mac):
    assert analyze(mac, annotate(mac, DelayModel(), 0)).constants == {}


@pytest.mark.parametrize("padding", list(Padding))
def test_delay_monotone_in_compression(mac, padding):
    delays = annotate(mac, DelayModel(), 20)
    d = np.array([[analyze(mac, delays, CompressionConfig(a, b, padding)).delay for b in range(9)] for a in range(9)])
    assert np.all(np.diff(d, axis=0) <= 1e-12)
    assert np.all(np.diff(d, axis=1) <= 1e-12)


def test_aging_scales_delay(mac):
    m = DelayModel()
    d0 = analyze(mac, annotate(mac, m, 0)).delay
    d50 = analyze(mac, annotate(mac, m, 50)).delay
    assert d50 / d0 == pytest.approx(0.27 / 0.22, rel=1e-12)


def test_sweep_shape_and_normalization(mac):
    rows = delay_sweep(mac, DelayModel(), [0, 50])
    assert len(rows) == 2 * 2 * 81
    assert SWEEP_COLUMNS == ("dvth_mv", "alpha", "beta", "padding", "delay", "normalized_delay")
    first = rows[0]
    assert (first.dvth_mv, first.alpha, first.beta, first.normalized_delay) == (0.0, 0, 0, 1.0)
    assert len(all_configs()) == 162


def test_full_compression_collapses(mac):
    rep = analyze(mac, annotate(mac, DelayModel(), 0), CompressionConfig(8, 8, Padding.MSB))
    # A*B vanishes entirely and only the low C bits remain live.
    assert rep.delay < analyze(mac, annotate(mac, DelayModel(), 0)).delay / 2


def test_bad_config():
    with pytest.raises(ParameterError):
        CompressionConfig(9, 0)
    with pytest.raises(ValueError):
        CompressionConfig(0, 0, "MIDDLE")


def test_delay_table_length(mac):
    with pytest.raises(ParameterError):
        analyze(mac, [1.0] * 3)
