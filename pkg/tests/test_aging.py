import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agingquant.aging import CANONICAL_LEVELS_MV, AgingLevel, DelayModel, annotate, delay_scale
from agingquant.errors import ModelError, ParameterError
from agingquant.netlist import GateKind


def test_fresh_is_identity():
    assert delay_scale(DelayModel(), 0) == 1.0


def test_default_scale_at_50mv():
    # overdrive 0.27 V shrinks to 0.22 V
    assert delay_scale(DelayModel(), 50) == pytest.approx(0.27 / 0.22, rel=1e-12)


def test_strictly_increasing_over_levels():
    s = [delay_scale(DelayModel(), lv) for lv in CANONICAL_LEVELS_MV]
    assert all(x < y for x, y in zip(s, s[1:]))


@given(st.floats(0.3, 1.2), st.floats(0.1, 0.29), st.floats(0, 100))
def test_scale_closed_form(vdd, vth0, dvth):
    m = DelayModel(vdd, vth0)
    if vdd - vth0 - dvth * 1e-3 <= 0:
        with pytest.raises(ModelError):
            delay_scale(m, dvth)
    else:
        assert delay_scale(m, AgingLevel(dvth)) == pytest.approx((vdd - vth0) / (vdd - vth0 - dvth * 1e-3))


def test_annotate_scales_every_gate(mac):
    m = DelayModel()
    fresh, aged = np.array(annotate(mac, m, 0)), np.array(annotate(mac, m, 30))
    np.testing.assert_allclose(aged / fresh, delay_scale(m, 30))
    kinds = {g.kind for g in mac.gates}
    for g, d in zip(mac.gates, fresh):
        assert d == m.base_delay[g.kind]
    assert GateKind.XOR2 in kinds


def test_overrides():
    m = DelayModel().with_overrides(XOR2=2.5)
    assert m.base_delay[GateKind.XOR2] == 2.5
    assert m.base_delay[GateKind.AND2] == 1.4


@pytest.mark.parametrize("mv", [-1, 100.5])
def test_level_range(mv):
    with pytest.raises(ParameterError):
        AgingLevel(mv)


def test_transistor_off():
    with pytest.raises(ModelError):
        DelayModel(vdd=0.2, vth0=0.23)
    with pytest.raises(ModelError):
        delay_scale(DelayModel(vdd=0.28, vth0=0.23), 60)


def test_nonpositive_base_delay():
    with pytest.raises(ParameterError):
        DelayModel().with_overrides(AND2=0.0)
