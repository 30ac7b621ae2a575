"""Aging-aware selection of input compression and quantization method.

For an aging level, every (alpha, beta) in [0, 8]^2 is timed under both
paddings with the aged delay table; the pairs meeting the guardband-free
deadline form the feasible set. The pair nearest (0, 0) is chosen (ties go to
the smaller alpha), the model is quantized with every method in the library,
and the most accurate (or the first within a loss threshold) wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .aging import DelayModel, annotate
from .errors import SelectionError
from .netlist import Netlist
from .nn import Dataset, Model, QuantizedModel, evaluate_accuracy, quantize_model
from .quant import ALL_METHODS, QuantMethod
from .sta import OPERAND_BITS, CompressionConfig, Padding, analyze
from .timing_sim import SimConfig, error_metrics

DEFAULT_CALIBRATION = 500


@dataclass(frozen=True)
class FeasiblePoint:
    alpha: int
    beta: int
    padding: Padding
    delay: float

    @property
    def norm_sq(self) -> int:
        return self.alpha ** 2 + self.beta ** 2


def feasible_set(
    netlist: Netlist,
    model: DelayModel,
    level: float,
    deadline: float,
    max_bits: int = OPERAND_BITS,
) -> list[FeasiblePoint]:
    """Compression pairs whose aged delay meets ``deadline`` under some padding.

    The faster padding is recorded; equal delays record LSB.
    """
    delays = annotate(netlist, model, level)
    limit = deadline * (1 + 1e-12)
    out = []
    for a in range(max_bits + 1):
        for b in range(max_bits + 1):
            d_msb = analyze(netlist, delays, CompressionConfig(a, b, Padding.MSB)).delay
            d_lsb = analyze(netlist, delays, CompressionConfig(a, b, Padding.LSB)).delay
            pad, d = (Padding.LSB, d_lsb) if d_lsb <= d_msb else (Padding.MSB, d_msb)
            if d <= limit:
                out.append(FeasiblePoint(a, b, pad, d))
    return out


def _key(p) -> tuple[int, int, int]:
    a, b = (p.alpha, p.beta) if isinstance(p, FeasiblePoint) else (p[0], p[1])
    return a * a + b * b, a, b


def select_compression(feasible: Iterable):
    """Element of ``feasible`` with minimum Euclidean norm, then minimum alpha.

    Accepts FeasiblePoint objects or (alpha, beta[, padding]) tuples and
    returns the chosen element unchanged. Norms are compared as exact
    integer squares.
    """
    items = list(feasible)
    if not items:
        raise SelectionError("no feasible compression to select from")
    return min(items, key=_key)


@dataclass
class MethodRow:
    method: QuantMethod
    accuracy: float
    accuracy_loss: float


@dataclass
class QuantSelection:
    method: QuantMethod
    qmodel: QuantizedModel
    accuracy: float
    fp32_accuracy: float
    accuracy_loss: float
    table: list[MethodRow]
    threshold_met: bool


def select_quantization(
    model: Model,
    dataset: Dataset,
    alpha: int,
    beta: int,
    threshold: float | None = None,
    padding: Padding | str = Padding.MSB,
    methods: Sequence[QuantMethod] = ALL_METHODS,
    n_calibration: int = DEFAULT_CALIBRATION,
) -> QuantSelection:
    """Try methods in order; stop at the first within ``threshold`` if given."""
    cal = dataset.x_train[:n_calibration]
    fp32 = evaluate_accuracy(model, dataset.x_test, dataset.y_test)
    table: list[MethodRow] = []
    best: tuple[float, QuantizedModel] | None = None
    for method in methods:
        qm = quantize_model(model, method, alpha, beta, cal, padding=padding)
        acc = evaluate_accuracy(qm, dataset.x_test, dataset.y_test)
        table.append(MethodRow(QuantMethod(method), acc, fp32 - acc))
        if best is None or acc > best[0]:
            best = (acc, qm)
        if threshold is not None and fp32 - acc <= threshold:
            return QuantSelection(qm.method, qm, acc, fp32, fp32 - acc, table, True)
    acc, qm = best
    met = threshold is None or fp32 - acc <= threshold
    return QuantSelection(qm.method, qm, acc, fp32, fp32 - acc, table, met)


def rank_correlation(losses: Sequence[float], norms: Sequence[float]) -> float | None:
    """Pearson coefficient between the average-rank vectors; None if undefined."""
    r1 = rankdata(losses)
    r2 = rankdata(norms)
    if np.ptp(r1) == 0 or np.ptp(r2) == 0:
        return None
    return float(np.corrcoef(r1, r2)[0, 1])


def validate_surrogate(
    model: Model,
    dataset: Dataset,
    methods: Sequence[QuantMethod] = ALL_METHODS,
    grid: Sequence[int] = range(5),
    n_calibration: int = DEFAULT_CALIBRATION,
) -> dict[QuantMethod, float | None]:
    """Rank agreement between measured accuracy loss and sqrt(alpha^2 + beta^2)."""
    pairs = [(a, b) for a in grid for b in grid]
    if not pairs:
        raise SelectionError("empty validation grid")
    cal = dataset.x_train[:n_calibration]
    fp32 = evaluate_accuracy(model, dataset.x_test, dataset.y_test)
    norms = [math.hypot(a, b) for a, b in pairs]
    out = {}
    for method in methods:
        losses = [fp32 - evaluate_accuracy(quantize_model(model, method, a, b, cal), dataset.x_test, dataset.y_test)
                  for a, b in pairs]
        out[QuantMethod(method)] = rank_correlation(losses, norms)
    return out


@dataclass
class SelectionResult:
    dvth_mv: float
    feasible: list[FeasiblePoint]
    alpha: int | None = None
    beta: int | None = None
    padding: Padding | None = None
    quant: QuantSelection | None = None
    norm_delay: float | None = None
    timing_errors: int | None = None
    verify_vectors: int = 0
    norm_energy: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def infeasible(self) -> bool:
        return self.alpha is None

    @property
    def method(self) -> QuantMethod | None:
        return self.quant.method if self.quant else None


def pipeline(
    netlist: Netlist,
    delay_model: DelayModel,
    model: Model,
    dataset: Dataset,
    levels: Iterable[float],
    threshold: float | None = None,
    guardband: float = 0.0,
    verify_vectors: int = 100_000,
    seed: int = 0,
    methods: Sequence[QuantMethod] = ALL_METHODS,
) -> list[SelectionResult]:
    """Select per level and verify the selection by timing simulation.

    ``guardband`` is additive slack on the fresh critical-path deadline.
    Energy is normalized to the uncompressed fresh MAC under the same
    stimulus seed.
    """
    fresh = annotate(netlist, delay_model, 0.0)
    d_fresh = analyze(netlist, fresh).delay
    deadline = d_fresh + guardband
    baseline = None
    if verify_vectors:
        baseline = error_metrics(netlist, fresh, SimConfig(deadline, verify_vectors, seed)).mean_toggles
    results = []
    for level in levels:
        feas = feasible_set(netlist, delay_model, level, deadline)
        res = SelectionResult(float(level), feas)
        results.append(res)
        if not feas:
            continue
        choice = select_compression(feas)
        res.alpha, res.beta, res.padding = choice.alpha, choice.beta, choice.padding
        res.norm_delay = choice.delay / d_fresh
        if OPERAND_BITS - choice.alpha >= 1 and OPERAND_BITS - choice.beta >= 1:
            res.quant = select_quantization(model, dataset, choice.alpha, choice.beta, threshold,
                                            padding=choice.padding, methods=methods)
        if verify_vectors:
            cfg = CompressionConfig(choice.alpha, choice.beta, choice.padding)
            sim = error_metrics(netlist, annotate(netlist, delay_model, level),
                                SimConfig(deadline, verify_vectors, seed, compression=cfg))
            res.timing_errors = int(round(sim.error_rate * sim.n))
            res.verify_vectors = sim.n
            res.norm_energy = sim.mean_toggles / baseline if baseline else None
            res.extra["max_settle_time"] = sim.max_settle_time
    return results
