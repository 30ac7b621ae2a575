"""Threshold-voltage shift to gate-delay scaling.

On-current falls linearly with the gate overdrive ``vdd - (vth0 + dvth)`` and
gate delay is inversely proportional to on-current, so aging multiplies every
gate delay by ``(vdd - vth0) / (vdd - vth0 - dvth)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .errors import ModelError, ParameterError
from .netlist import GateKind, Netlist

CANONICAL_LEVELS_MV = (0, 10, 20, 30, 40, 50)
MAX_DVTH_MV = 100.0

DEFAULT_BASE_DELAYS = MappingProxyType({
    GateKind.NOT: 1.0,
    GateKind.NAND2: 1.0,
    GateKind.NOR2: 1.0,
    GateKind.AND2: 1.4,
    GateKind.OR2: 1.4,
    GateKind.XOR2: 1.8,
    GateKind.XNOR2: 1.8,
})


@dataclass(frozen=True)
class AgingLevel:
    dvth_mv: float

    def __post_init__(self):
        if not 0.0 <= self.dvth_mv <= MAX_DVTH_MV:
            raise ParameterError(f"dvth must be in [0, {MAX_DVTH_MV}] mV, got {self.dvth_mv}")


@dataclass(frozen=True)
class DelayModel:
    vdd: float = 0.50
    vth0: float = 0.23
    base_delay: Mapping[GateKind, float] = field(default=DEFAULT_BASE_DELAYS)

    def __post_init__(self):
        bad = {k: v for k, v in self.base_delay.items() if not v > 0}
        if bad:
            raise ParameterError(f"base delays must be positive: {bad}")
        if self.vdd - self.vth0 <= 0:
            raise ModelError("transistor off: vdd must exceed vth0")

    def with_overrides(self, **delays: float) -> "DelayModel":
        merged = dict(self.base_delay)
        merged.update({GateKind(k): float(v) for k, v in delays.items()})
        return DelayModel(self.vdd, self.vth0, MappingProxyType(merged))


def _level_mv(level) -> float:
    return level.dvth_mv if isinstance(level, AgingLevel) else AgingLevel(float(level)).dvth_mv


def delay_scale(model: DelayModel, level) -> float:
    """Delay multiplier at ``level`` (AgingLevel or millivolts)."""
    dvth = _level_mv(level) * 1e-3
    fresh = model.vdd - model.vth0
    aged = fresh - dvth
    if aged <= 0:
        raise ModelError(f"transistor off at dvth={dvth * 1e3:g} mV (overdrive {aged:.4f} V)")
    return fresh / aged


def annotate(netlist: Netlist, model: DelayModel, level) -> tuple[float, ...]:
    """Per-gate delays, worst-case aged uniformly across the circuit."""
    s = delay_scale(model, level)
    try:
        return tuple(model.base_delay[g.kind] * s for g in netlist.gates)
    except KeyError as exc:
        raise ParameterError(f"no base delay for gate kind {exc.args[0]}") from None
