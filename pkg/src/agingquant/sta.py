"""Topological static timing analysis with case-analysis constants.

Input bits that input compression pads with zero are tied to constant 0 and
propagated through the netlist; constant nets carry no arrival time and drop
out of every max, which is how compression shortens the circuit delay.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from .aging import DelayModel, annotate
from .errors import ParameterError
from .netlist import MAC_ACC_BITS, GateKind, Netlist

OPERAND_BITS = 8
PORT_WIDTHS = {"A": OPERAND_BITS, "B": OPERAND_BITS, "C": MAC_ACC_BITS}


class Padding(str, enum.Enum):
    MSB = "MSB"
    LSB = "LSB"


@dataclass(frozen=True)
class CompressionConfig:
    alpha: int = 0
    beta: int = 0
    padding: Padding = Padding.MSB

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, int) and 0 <= v <= OPERAND_BITS):
                raise ParameterError(f"{name} must be an int in [0, {OPERAND_BITS}], got {v!r}")
        object.__setattr__(self, "padding", Padding(self.padding))

    @property
    def widths(self) -> dict[str, int]:
        """Compressed operand widths for A', B', C'."""
        return {
            "A": OPERAND_BITS - self.alpha,
            "B": OPERAND_BITS - self.beta,
            "C": MAC_ACC_BITS - self.alpha - self.beta,
        }

    @property
    def shift(self) -> dict[str, int]:
        """Left shift applied to each compressed operand by the padding."""
        if self.padding is Padding.MSB:
            return {"A": 0, "B": 0, "C": 0}
        return {"A": self.alpha, "B": self.beta, "C": self.alpha + self.beta}

    def label(self) -> str:
        return f"({self.alpha},{self.beta})/{self.padding.value}"


def constant_bits(config: CompressionConfig) -> frozenset[tuple[str, int]]:
    """(port, bit) pairs tied to zero by the padding."""
    removed = {"A": config.alpha, "B": config.beta, "C": config.alpha + config.beta}
    out = set()
    for port, k in removed.items():
        width = PORT_WIDTHS[port]
        bits = range(width - k, width) if config.padding is Padding.MSB else range(k)
        out.update((port, b) for b in bits)
    return frozenset(out)


def _const_eval(kind: GateKind, vals: list) -> bool | None:
    # vals holds True/False for constant inputs and None otherwise.
    if kind is GateKind.NOT:
        return None if vals[0] is None else not vals[0]
    a, b = vals
    if kind in (GateKind.AND2, GateKind.NAND2):
        if a is False or b is False:
            v = False
        elif a is None or b is None:
            return None
        else:
            v = True
        return v if kind is GateKind.AND2 else not v
    if kind in (GateKind.OR2, GateKind.NOR2):
        if a is True or b is True:
            v = True
        elif a is None or b is None:
            return None
        else:
            v = False
        return v if kind is GateKind.OR2 else not v
    if a is None or b is None:
        return None
    v = a != b
    return v if kind is GateKind.XOR2 else not v


def propagate_constants(netlist: Netlist, zeros: Iterable[tuple[str, int]]) -> dict[int, bool]:
    """Fixed point of gate-level constant propagation from zero-tied inputs.

    Bits on ports the netlist does not have (C on the bare multiplier) are
    ignored. The result maps net -> constant value and includes the seeds.
    """
    const: dict[int, bool] = {}
    for port, bit in zeros:
        if port in netlist.inputs:
            const[netlist.inputs[port][bit]] = False
    # A single pass in topological order reaches the fixed point.
    for g in netlist.gates:
        v = _const_eval(g.kind, [const.get(i) for i in g.inputs])
        if v is not None:
            const[g.output] = v
    return const


@dataclass(frozen=True)
class TimingReport:
    arrival: tuple[float | None, ...]
    delay: float
    critical_path: tuple[int, ...]
    constants: dict[int, bool]

    def path_delay(self, delays: Sequence[float]) -> float:
        return sum(delays[g] for g in self.critical_path)


def analyze(netlist: Netlist, delays: Sequence[float], config: CompressionConfig | None = None) -> TimingReport:
    if len(delays) != len(netlist.gates):
        raise ParameterError(f"delay table has {len(delays)} entries for {len(netlist.gates)} gates")
    config = config or CompressionConfig()
    const = propagate_constants(netlist, constant_bits(config))
    arrival: list[float | None] = [None] * netlist.n_nets
    for n in netlist.input_nets:
        if n not in const:
            arrival[n] = 0.0
    # pred[g] is the input net whose arrival set gate g's output arrival.
    pred: dict[int, int] = {}
    for gi, g in enumerate(netlist.gates):
        if g.output in const:
            continue
        best_net, best_t = -1, None
        for n in g.inputs:
            t = arrival[n]
            if t is None:
                continue
            if best_t is None or t > best_t or (t == best_t and netlist.driver(n) < netlist.driver(best_net)):
                best_net, best_t = n, t
        arrival[g.output] = best_t + delays[gi]
        pred[gi] = best_net

    end, delay = -1, 0.0
    for n in netlist.outputs[netlist.output_port]:
        t = arrival[n]
        if t is None:
            continue
        if end == -1 or t > delay or (t == delay and netlist.driver(n) < netlist.driver(end)):
            end, delay = n, t
    path = []
    n = end
    while n != -1 and netlist.driver(n) >= 0:
        gi = netlist.driver(n)
        path.append(gi)
        n = pred[gi]
    return TimingReport(tuple(arrival), delay, tuple(reversed(path)), const)


@dataclass(frozen=True)
class SweepRow:
    dvth_mv: float
    alpha: int
    beta: int
    padding: Padding
    delay: float
    normalized_delay: float


SWEEP_COLUMNS = ("dvth_mv", "alpha", "beta", "padding", "delay", "normalized_delay")


def all_configs(max_bits: int = OPERAND_BITS) -> list[CompressionConfig]:
    return [
        CompressionConfig(a, b, p)
        for p in (Padding.MSB, Padding.LSB)
        for a in range(max_bits + 1)
        for b in range(max_bits + 1)
    ]


def fresh_delay(netlist: Netlist, model: DelayModel) -> float:
    return analyze(netlist, annotate(netlist, model, 0.0)).delay


def delay_sweep(
    netlist: Netlist,
    model: DelayModel,
    levels: Iterable[float],
    configs: Iterable[CompressionConfig] | None = None,
) -> list[SweepRow]:
    """Cartesian (level x config) delay table normalized to the fresh baseline."""
    configs = list(configs) if configs is not None else all_configs()
    d_fresh = fresh_delay(netlist, model)
    rows = []
    for level in levels:
        delays = annotate(netlist, model, level)
        for cfg in configs:
            d = analyze(netlist, delays, cfg).delay
            rows.append(SweepRow(float(level), cfg.alpha, cfg.beta, cfg.padding, d, d / d_fresh))
    return rows
