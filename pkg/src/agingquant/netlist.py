"""Gate-level combinational netlists for the 8-bit multiplier and the MAC.

Nets are integers. Primary input bits own the lowest net ids, and every gate
drives exactly one fresh net, so gate index order is a valid topological
order by construction.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParameterError

MAC_ACC_BITS = 22


class GateKind(str, enum.Enum):
    NOT = "NOT"
    AND2 = "AND2"
    OR2 = "OR2"
    NAND2 = "NAND2"
    NOR2 = "NOR2"
    XOR2 = "XOR2"
    XNOR2 = "XNOR2"

    @property
    def arity(self) -> int:
        return 1 if self is GateKind.NOT else 2


def apply_gate(kind: GateKind, a, b=None):
    """Evaluate one gate on bool arrays or packed integer words."""
    if kind is GateKind.NOT:
        return ~a
    if kind is GateKind.AND2:
        return a & b
    if kind is GateKind.OR2:
        return a | b
    if kind is GateKind.NAND2:
        return ~(a & b)
    if kind is GateKind.NOR2:
        return ~(a | b)
    if kind is GateKind.XOR2:
        return a ^ b
    if kind is GateKind.XNOR2:
        return ~(a ^ b)
    raise ParameterError(f"unknown gate kind {kind!r}")


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    inputs: tuple[int, ...]
    output: int


@dataclass(frozen=True)
class Netlist:
    """Immutable combinational circuit.

    ``inputs`` and ``outputs`` map a port name to its bit nets, LSB first.
    """

    name: str
    n_nets: int
    gates: tuple[Gate, ...]
    inputs: Mapping[str, tuple[int, ...]]
    outputs: Mapping[str, tuple[int, ...]]
    _driver: tuple[int, ...] = field(default=(), repr=False, compare=False)
    _fanout: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        driver = [-1] * self.n_nets
        fanout: list[list[int]] = [[] for _ in range(self.n_nets)]
        used = [n for bits in (*self.inputs.values(), *self.outputs.values()) for n in bits]
        used += [n for g in self.gates for n in (*g.inputs, g.output)]
        if any(not 0 <= n < self.n_nets for n in used):
            raise ParameterError(f"net id outside [0, {self.n_nets})")
        for bits in self.inputs.values():
            for n in bits:
                if driver[n] != -1:
                    raise ParameterError(f"net {n} has more than one driver")
                driver[n] = -2
        for gi, g in enumerate(self.gates):
            if len(g.inputs) != g.kind.arity:
                raise ParameterError(f"gate {gi} ({g.kind.value}) has {len(g.inputs)} inputs")
            for n in g.inputs:
                if driver[n] == -1:
                    raise ParameterError(f"gate {gi} reads net {n} before it is driven")
                fanout[n].append(gi)
            if driver[g.output] != -1:
                raise ParameterError(f"net {g.output} has more than one driver")
            driver[g.output] = gi
        object.__setattr__(self, "_driver", tuple(driver))
        object.__setattr__(self, "_fanout", tuple(tuple(f) for f in fanout))

    @property
    def input_nets(self) -> list[int]:
        return [n for bits in self.inputs.values() for n in bits]

    @property
    def output_port(self) -> str:
        return next(iter(self.outputs))

    def driver(self, net: int) -> int:
        """Gate index driving ``net``, or -2 for a primary input."""
        return self._driver[net]

    def fanout(self, net: int) -> tuple[int, ...]:
        return self._fanout[net]

    def input_bit(self, port: str, bit: int) -> int:
        return self.inputs[port][bit]

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "agingquant-netlist/1",
            "name": self.name,
            "n_nets": self.n_nets,
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "outputs": {k: list(v) for k, v in self.outputs.items()},
            "gates": [[g.kind.value, list(g.inputs), g.output] for g in self.gates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Netlist":
        if d.get("format") != "agingquant-netlist/1":
            raise ParameterError(f"unsupported netlist format {d.get('format')!r}")
        try:
            gates = tuple(Gate(GateKind(k), tuple(ins), out) for k, ins, out in d["gates"])
        except (ValueError, TypeError) as exc:
            raise ParameterError(f"malformed gate list: {exc}") from None
        return cls(
            name=d["name"],
            n_nets=d["n_nets"],
            gates=gates,
            inputs={k: tuple(v) for k, v in d["inputs"].items()},
            outputs={k: tuple(v) for k, v in d["outputs"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Netlist":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Builder:
    def __init__(self, name: str):
        self.name = name
        self.n_nets = 0
        self.gates: list[Gate] = []
        self.inputs: dict[str, tuple[int, ...]] = {}
        self.outputs: dict[str, tuple[int, ...]] = {}

    def port(self, name: str, width: int) -> list[int]:
        nets = list(range(self.n_nets, self.n_nets + width))
        self.n_nets += width
        self.inputs[name] = tuple(nets)
        return nets

    def gate(self, kind: GateKind, *ins: int) -> int:
        out = self.n_nets
        self.n_nets += 1
        self.gates.append(Gate(kind, tuple(ins), out))
        return out

    def half_adder(self, a: int, b: int) -> tuple[int, int]:
        return self.gate(GateKind.XOR2, a, b), self.gate(GateKind.AND2, a, b)

    def full_adder(self, a: int, b: int, c: int) -> tuple[int, int]:
        t = self.gate(GateKind.XOR2, a, b)
        s = self.gate(GateKind.XOR2, t, c)
        g = self.gate(GateKind.AND2, a, b)
        p = self.gate(GateKind.AND2, t, c)
        return s, self.gate(GateKind.OR2, g, p)

    def build(self) -> Netlist:
        return Netlist(self.name, self.n_nets, tuple(self.gates), self.inputs, self.outputs)


def _array_multiplier(b: _Builder, a_bits: list[int], b_bits: list[int]) -> list[int]:
    # Row i adds partial products A[j]&B[i] (weight i+j) to the previous row's
    # sum/carry vectors; a ripple row resolves the final carry-save pair.
    n = len(a_bits)
    pp = [[b.gate(GateKind.AND2, a_bits[j], b_bits[i]) for j in range(n)] for i in range(n)]
    product: list[int] = [pp[0][0]]
    sums = {j: pp[0][j] for j in range(1, n)}
    carries: dict[int, int] = {}
    for i in range(1, n):
        new_sums, new_carries = {}, {}
        for j in range(n):
            w = i + j
            operands = [pp[i][j]] + [v[w] for v in (sums, carries) if w in v]
            if len(operands) == 1:
                new_sums[w] = operands[0]
                continue
            s, c = (b.half_adder if len(operands) == 2 else b.full_adder)(*operands)
            new_sums[w] = s
            new_carries[w + 1] = c
        product.append(new_sums.pop(i))
        sums, carries = new_sums, new_carries
    carry = None
    for w in range(n, 2 * n):
        operands = [v[w] for v in (sums, carries) if w in v]
        if carry is not None:
            operands.append(carry)
        if w == 2 * n - 1:
            # The product fits in 2n bits, so no carry leaves the top column.
            if len(operands) == 1:
                product.append(operands[0])
            else:
                product.append(b.gate(GateKind.XOR2, *operands))
            break
        if len(operands) == 1:
            product.append(operands[0])
            carry = None
            continue
        s, carry = (b.half_adder if len(operands) == 2 else b.full_adder)(*operands)
        product.append(s)
    return product


def build_multiplier(width: int = 8) -> Netlist:
    """Carry-save array multiplier with ports A, B and product P[2*width]."""
    if not 2 <= width <= 8:
        raise ParameterError(f"multiplier width must be in [2, 8], got {width}")
    b = _Builder(f"mult{width}")
    a_bits = b.port("A", width)
    b_bits = b.port("B", width)
    b.outputs["P"] = tuple(_array_multiplier(b, a_bits, b_bits))
    return b.build()


def build_mac() -> Netlist:
    """8x8 multiplier feeding a 22-bit ripple-carry accumulator adder.

    Computes (A*B + C) mod 2**22; the carry out of bit 21 is dropped.
    """
    b = _Builder("mac")
    a_bits = b.port("A", 8)
    b_bits = b.port("B", 8)
    c_bits = b.port("C", MAC_ACC_BITS)
    prod = _array_multiplier(b, a_bits, b_bits)
    out = []
    carry = None
    for k in range(MAC_ACC_BITS):
        operands = [c_bits[k]] + ([prod[k]] if k < len(prod) else [])
        if carry is not None:
            operands.append(carry)
        if k == MAC_ACC_BITS - 1:
            out.append(b.gate(GateKind.XOR2, *operands) if len(operands) > 1 else operands[0])
            break
        if len(operands) == 1:
            out.append(operands[0])
            carry = None
            continue
        s, carry = (b.half_adder if len(operands) == 2 else b.full_adder)(*operands)
        out.append(s)
    b.outputs["O"] = tuple(out)
    return b.build()


def to_bits(values, width: int) -> np.ndarray:
    """Integer array -> bool array of shape (width, n), LSB first."""
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    return ((v[None, :] >> np.arange(width, dtype=np.int64)[:, None]) & 1).astype(bool)


def from_bits(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_bits`."""
    weights = np.int64(1) << np.arange(bits.shape[0], dtype=np.int64)
    return (bits.astype(np.int64) * weights[:, None]).sum(axis=0)


def evaluate_nets(netlist: Netlist, inputs: Mapping[str, object]) -> np.ndarray:
    """Zero-delay evaluation; returns a (n_nets, n_vectors) bool array."""
    missing = set(netlist.inputs) - set(inputs)
    if missing:
        raise ParameterError(f"missing port assignment(s): {sorted(missing)}")
    arrays = {k: np.atleast_1d(np.asarray(inputs[k], dtype=np.int64)) for k in netlist.inputs}
    n = max(a.size for a in arrays.values())
    values = np.zeros((netlist.n_nets, n), dtype=bool)
    for port, nets in netlist.inputs.items():
        a = np.broadcast_to(arrays[port].reshape(-1), (n,))
        values[list(nets)] = to_bits(a, len(nets))
    for g in netlist.gates:
        values[g.output] = apply_gate(g.kind, *(values[i] for i in g.inputs))
    return values


def evaluate(netlist: Netlist, inputs: Mapping[str, object]) -> np.ndarray:
    """Steady-state output word(s) for the given port assignment.

    Port values may be scalars or equal-length integer arrays; the result is
    always an int64 array.
    """
    values = evaluate_nets(netlist, inputs)
    out = netlist.outputs[netlist.output_port]
    return from_bits(values[list(out)])
