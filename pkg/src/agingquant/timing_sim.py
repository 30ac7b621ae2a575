"""Two-vector transport-delay timing simulation.

The circuit sits settled at vector ``v1``; ``v2`` is applied at t=0 and each
output is captured at the deadline. Gate delays are converted to integer
ticks so that reconvergent paths with equal delay land on the same instant.

Two engines share these semantics:

* :func:`simulate_pair` is a plain event-queue simulator over one pair, with
  a full event log. It is the reference.
* :func:`simulate_batch` computes, gate by gate, the waveform of every net for
  many pairs at once, with pairs packed 64 per machine word. A gate's output
  waveform is ``f(inputs at t - delay)``, evaluated at every instant where an
  input may change; instants at which no pair changes are dropped.
"""

from __future__ import annotations

import heapq
from fractions import Fraction
from math import gcd
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError, SimulationError
from .netlist import Netlist, apply_gate, evaluate, from_bits, to_bits
from .sta import CompressionConfig, constant_bits

TICK = 1e-9
CHUNK = 16384


def time_base(delays: Sequence[float]) -> tuple[np.ndarray, float]:
    """Integer gate delays and the time unit they are expressed in.

    Delays are rationalized against the smallest one, so a uniformly scaled
    table (every aged table) maps to the same integers and reconvergent paths
    of equal length coincide exactly. Tables with no small rational structure
    fall back to a fixed tick.
    """
    d = np.asarray(delays, dtype=np.float64)
    if d.size == 0:
        return np.zeros(0, dtype=np.int64), TICK
    ref = float(d.min())
    ratios = [Fraction(float(x) / ref).limit_denominator(1000) for x in np.unique(d)]
    lcm = 1
    for r in ratios:
        lcm = lcm * r.denominator // gcd(lcm, r.denominator)
    unit = ref / lcm
    ticks = np.round(d / unit)
    if lcm <= 10_000 and np.allclose(ticks * unit, d, rtol=1e-9, atol=0):
        return ticks.astype(np.int64), unit
    return np.round(d / TICK).astype(np.int64), TICK


def to_ticks(delays: Sequence[float]) -> np.ndarray:
    return time_base(delays)[0]


def _deadline_ticks(deadline: float, unit: float) -> int:
    # Tolerate float noise in a deadline computed by summing float delays.
    return int(np.floor(deadline / unit * (1 + 1e-9)))


@dataclass(frozen=True)
class Event:
    time: float
    net: int
    value: bool


@dataclass(frozen=True)
class PairResult:
    captured: int
    settled: int
    settle_time: float
    toggles: int
    events: tuple[Event, ...]


def _word(netlist: Netlist, vec: Mapping[str, int]) -> dict[int, bool]:
    vals = {}
    for port, nets in netlist.inputs.items():
        if port not in vec:
            raise ParameterError(f"missing port assignment {port!r}")
        x = int(vec[port])
        for k, n in enumerate(nets):
            vals[n] = bool((x >> k) & 1)
    return vals


def simulate_pair(
    netlist: Netlist,
    delays: Sequence[float],
    v1: Mapping[str, int],
    v2: Mapping[str, int],
    deadline: float,
    max_events: int | None = None,
) -> PairResult:
    """Event-driven reference simulation of one vector transition."""
    ticks, unit = time_base(delays)
    limit = _deadline_ticks(deadline, unit)
    settled1 = evaluate_state(netlist, v1)
    state = list(settled1)
    out_nets = netlist.outputs[netlist.output_port]
    captured_state = {n: settled1[n] for n in out_nets}
    pending: dict[int, dict[int, bool]] = {0: _word(netlist, v2)}
    queue = [0]
    log: list[Event] = []
    toggles = 0
    bound = max_events if max_events is not None else 1000 * max(len(netlist.gates), 1)
    n_events = 0
    while queue:
        t = heapq.heappop(queue)
        changes = pending.pop(t)
        touched: set[int] = set()
        for net, v in changes.items():
            if state[net] != v:
                state[net] = v
                log.append(Event(t * unit, net, v))
                if t <= limit and net in captured_state:
                    captured_state[net] = v
                if netlist.driver(net) >= 0:
                    toggles += 1
                touched.update(netlist.fanout(net))
            n_events += 1
            if n_events > bound:
                raise SimulationError(f"no settle after {bound} events")
        for gi in sorted(touched):
            g = netlist.gates[gi]
            v = bool(apply_gate(g.kind, *(state[i] for i in g.inputs)))
            when = t + int(ticks[gi])
            if when not in pending:
                pending[when] = {}
                heapq.heappush(queue, when)
            pending[when][g.output] = v
    captured = sum(int(captured_state[n]) << k for k, n in enumerate(out_nets))
    settled = sum(int(state[n]) << k for k, n in enumerate(out_nets))
    settle_time = max((e.time for e in log if netlist.driver(e.net) >= 0), default=0.0)
    return PairResult(captured, settled, settle_time, toggles, tuple(log))


def evaluate_state(netlist: Netlist, vec: Mapping[str, int]) -> list[bool]:
    """Steady-state value of every net for a single vector."""
    state = [False] * netlist.n_nets
    for n, v in _word(netlist, vec).items():
        state[n] = v
    for g in netlist.gates:
        state[g.output] = bool(apply_gate(g.kind, *(state[i] for i in g.inputs)))
    return state


# -- bit-parallel waveform engine ---------------------------------------------


def _pack(bits: np.ndarray) -> np.ndarray:
    """(rows, n) bool -> (rows, ceil(n/64)) uint64, pair i in bit i%64 of word i//64."""
    rows, n = bits.shape
    n_words = -(-n // 64)
    padded = np.zeros((rows, n_words * 64), dtype=bool)
    padded[:, :n] = bits
    return np.packbits(padded, axis=1, bitorder="little").view("<u8")


def _unpack(words: np.ndarray, n: int) -> np.ndarray:
    return np.unpackbits(words.astype("<u8").view(np.uint8), axis=-1, bitorder="little")[..., :n].astype(bool)


@dataclass
class BatchResult:
    """Per-pair captured/settled outputs plus batch totals."""

    captured: np.ndarray
    settled: np.ndarray
    gate_toggles: np.ndarray  # per gate, summed over pairs
    max_settle_time: float
    n: int


def simulate_batch(
    netlist: Netlist,
    delays: Sequence[float],
    v1: Mapping[str, np.ndarray],
    v2: Mapping[str, np.ndarray],
    deadline: float,
) -> BatchResult:
    ticks, unit = time_base(delays)
    if len(ticks) != len(netlist.gates):
        raise ParameterError("delay table does not match netlist")
    n = len(np.asarray(next(iter(v1.values()))))
    limit = _deadline_ticks(deadline, unit)

    times: dict[int, np.ndarray] = {}
    waves: dict[int, np.ndarray] = {}
    empty = np.zeros(0, dtype=np.int64)
    zero_t = np.zeros(1, dtype=np.int64)
    for port, nets in netlist.inputs.items():
        b1 = _pack(to_bits(v1[port], len(nets)))
        b2 = _pack(to_bits(v2[port], len(nets)))
        for k, net in enumerate(nets):
            if np.array_equal(b1[k], b2[k]):
                times[net], waves[net] = empty, b1[k][None, :]
            else:
                times[net], waves[net] = zero_t, np.stack([b1[k], b2[k]])

    out_nets = set(netlist.outputs[netlist.output_port])
    remaining = [len(netlist.fanout(i)) for i in range(netlist.n_nets)]
    gate_toggles = np.zeros(len(netlist.gates), dtype=np.int64)
    max_settle = 0

    for gi, g in enumerate(netlist.gates):
        d = ticks[gi]
        ins = g.inputs
        t_out = np.unique(np.concatenate([times[i] for i in ins])) + d if ins else empty
        rows = [waves[i][np.searchsorted(times[i], t_out - d, side="right")] for i in ins]
        # Row 0 of each input is its settled v1 value; searchsorted indexes
        # straight into that layout.
        init = apply_gate(g.kind, *(waves[i][0] for i in ins))
        if t_out.size:
            vals = apply_gate(g.kind, *rows)
            full = np.concatenate([init[None, :], vals])
            diff = full[1:] ^ full[:-1]
            keep = diff.any(axis=1)
            gate_toggles[gi] = int(np.bitwise_count(diff[keep]).sum())
            t_out = t_out[keep]
            full = np.concatenate([init[None, :], vals[keep]])
            if t_out.size:
                max_settle = max(max_settle, int(t_out[-1]))
        else:
            full = init[None, :]
        times[g.output], waves[g.output] = t_out, full
        for i in ins:
            remaining[i] -= 1
            if remaining[i] == 0 and i not in out_nets:
                del times[i], waves[i]

    out = netlist.outputs[netlist.output_port]
    cap_words = np.stack([waves[o][np.searchsorted(times[o], limit, side="right")] for o in out])
    fin_words = np.stack([waves[o][-1] for o in out])
    return BatchResult(
        captured=from_bits(_unpack(cap_words, n)),
        settled=from_bits(_unpack(fin_words, n)),
        gate_toggles=gate_toggles,
        max_settle_time=max_settle * unit,
        n=n,
    )


# -- Monte Carlo metrics ------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Capture time and input stimulus for a Monte Carlo run.

    ``guardband`` is extra slack added to ``deadline``. ``trace`` optionally
    supplies a recorded operand stream (port -> int array of MAC operands);
    consecutive operations form the vector pairs.
    """

    deadline: float
    n_vectors: int = 100_000
    seed: int = 0
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    guardband: float = 0.0
    trace: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if not self.deadline > 0:
            raise ParameterError(f"deadline must be positive, got {self.deadline}")
        if self.n_vectors < 1:
            raise ParameterError(f"need at least one vector, got {self.n_vectors}")

    @property
    def capture_time(self) -> float:
        return self.deadline + self.guardband


@dataclass(frozen=True)
class SimResult:
    med: float
    msb_flip_prob: float
    error_rate: float
    mean_toggles: float
    bit_errors: tuple[int, ...]
    max_settle_time: float
    n: int


def draw_vectors(netlist: Netlist, config: SimConfig) -> tuple[dict, dict]:
    """Independent (v1, v2) pairs honoring the compression's zero bits."""
    rng = np.random.default_rng(config.seed)
    n = config.n_vectors
    if config.trace is not None:
        lengths = {len(np.asarray(config.trace[p])) for p in netlist.inputs}
        if len(lengths) != 1 or lengths.pop() < 2:
            raise ParameterError("trace must hold equal-length streams of at least two operations")
        length = len(np.asarray(config.trace[next(iter(netlist.inputs))]))
        idx = rng.integers(0, length - 1, size=n)
        v1 = {p: np.asarray(config.trace[p], dtype=np.int64)[idx] for p in netlist.inputs}
        v2 = {p: np.asarray(config.trace[p], dtype=np.int64)[idx + 1] for p in netlist.inputs}
        _check_zero_bits(netlist, config.compression, v1, v2)
        return v1, v2
    widths = config.compression.widths
    shift = config.compression.shift
    out: tuple[dict, dict] = ({}, {})
    for vec in out:
        for port in netlist.inputs:
            vec[port] = rng.integers(0, 1 << widths[port], size=n, dtype=np.int64) << shift[port]
    return out


def _check_zero_bits(netlist, compression, *vecs):
    for port, bit in constant_bits(compression):
        if port not in netlist.inputs:
            continue
        for v in vecs:
            if np.any((v[port] >> bit) & 1):
                raise ParameterError(f"stimulus drives {port}[{bit}], which the compression ties to 0")


def _chunks(n: int, size: int = CHUNK) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def run_batches(netlist, delays, v1, v2, deadline, workers: int = 1) -> list[BatchResult]:
    def job(s):
        return simulate_batch(netlist, delays, {k: v[s] for k, v in v1.items()},
                              {k: v[s] for k, v in v2.items()}, deadline)

    parts = _chunks(len(next(iter(v1.values()))))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(job, parts))
    return [job(s) for s in parts]


def error_metrics(netlist: Netlist, delays: Sequence[float], config: SimConfig, workers: int = 1) -> SimResult:
    v1, v2 = draw_vectors(netlist, config)
    width = len(netlist.outputs[netlist.output_port])
    msb_mask = 0b11 << (width - 2)
    abs_err = 0
    flips = 0
    wrong = 0
    toggles = 0
    bit_errors = np.zeros(width, dtype=np.int64)
    settle = 0.0
    for r in run_batches(netlist, delays, v1, v2, config.capture_time, workers):
        xor = r.captured ^ r.settled
        abs_err += int(np.abs(r.captured - r.settled).sum())
        flips += int(np.count_nonzero(xor & msb_mask))
        wrong += int(np.count_nonzero(xor))
        bit_errors += to_bits(xor, width).sum(axis=1)
        toggles += int(r.gate_toggles.sum())
        settle = max(settle, r.max_settle_time)
    n = config.n_vectors
    return SimResult(
        med=abs_err / n,
        msb_flip_prob=flips / n,
        error_rate=wrong / n,
        mean_toggles=toggles / n,
        bit_errors=tuple(int(b) for b in bit_errors),
        max_settle_time=settle,
        n=n,
    )


def toggle_energy(
    netlist: Netlist,
    delays: Sequence[float],
    config: SimConfig,
    weights: Sequence[float] | None = None,
    workers: int = 1,
) -> float:
    """Mean weighted gate-output transitions per operation, counted to settle."""
    w = np.ones(len(netlist.gates)) if weights is None else np.asarray(weights, dtype=np.float64)
    v1, v2 = draw_vectors(netlist, config)
    total = 0.0
    for r in run_batches(netlist, delays, v1, v2, config.capture_time, workers):
        total += float(r.gate_toggles @ w)
    return total / config.n_vectors

