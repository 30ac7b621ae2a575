"""Post-training affine quantization methods.

Every method reduces to choosing a clip range ``[lo, hi]`` containing zero;
:func:`params_from_range` then builds a lattice of ``2**bits`` codes over it,
nudged by at most half a step so that real zero is a code.

Methods
-------
M1  uniform symmetric: ``[-max|x|, max|x|]``, or ``[0, max x]`` for non-negative data
M2  asymmetric min/max: ``[min x, max x]``
M3  loss-aware clipping: clip bounds minimizing the mean L_p quantization error
M4  analytic clipping under a Laplace prior, with weight bias correction
M5  M4 without bias correction
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ParameterError

GOLDEN = (math.sqrt(5) - 1) / 2


class QuantMethod(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"

    @property
    def description(self) -> str:
        return {
            "M1": "uniform symmetric",
            "M2": "asymmetric min/max",
            "M3": "loss-aware clipping (LAPQ-style)",
            "M4": "analytic clipping (ACIQ-style) + bias correction",
            "M5": "analytic clipping (ACIQ-style), no bias correction",
        }[self.value]


ALL_METHODS = tuple(QuantMethod)


@dataclass(frozen=True)
class QuantParams:
    bits: int
    scale: float
    zero_point: int
    c_min: float
    c_max: float

    @property
    def levels(self) -> int:
        return 1 << self.bits

    def to_dict(self) -> dict:
        return {"bits": self.bits, "scale": self.scale, "zero_point": self.zero_point,
                "c_min": self.c_min, "c_max": self.c_max}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(int(d["bits"]), float(d["scale"]), int(d["zero_point"]), float(d["c_min"]), float(d["c_max"]))


def _check_bits(bits: int) -> None:
    if not (isinstance(bits, (int, np.integer)) and 1 <= bits <= 8):
        raise ParameterError(f"bits must be an int in [1, 8], got {bits!r}")


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def params_from_range(lo: float, hi: float, bits: int) -> QuantParams:
    _check_bits(bits)
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    top = (1 << bits) - 1
    if hi - lo <= 0:
        return QuantParams(bits, 1.0, 0, 0.0, float(top))
    scale = (hi - lo) / top
    zp = int(min(max(round_half_away(-lo / scale), 0), top))
    c_min = -(zp * scale)
    return QuantParams(bits, scale, zp, c_min, c_min + top * scale)


def quantize(params: QuantParams, x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), params.c_min, params.c_max)
    q = round_half_away((x - params.c_min) / params.scale)
    return np.clip(q, 0, params.levels - 1).astype(np.int64)


def dequantize(params: QuantParams, q) -> np.ndarray:
    q = np.asarray(q)
    if q.size and (q.min() < 0 or q.max() >= params.levels):
        raise ParameterError(f"code outside [0, {params.levels})")
    return params.c_min + params.scale * q.astype(np.float64)


def fake_quant(params: QuantParams, x) -> np.ndarray:
    return dequantize(params, quantize(params, x))


def lp_error(samples: np.ndarray, lo: float, hi: float, bits: int, p: float = 2.0) -> float:
    """Mean |Q(x) - x|**p for the lattice spanning [lo, hi]."""
    params = params_from_range(lo, hi, bits)
    return float(np.mean(np.abs(fake_quant(params, samples) - samples) ** p))


# -- 1-D search -----------------------------------------------------------------


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def scan_then_refine(f: Callable[[float], float], a: float, b: float, n_scan: int = 257) -> float:
    """Global scan for the basin, golden-section inside the best bracket."""
    xs = np.linspace(a, b, n_scan)
    fs = [f(x) for x in xs]
    k = int(np.argmin(fs))
    lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, n_scan - 1)]
    x = golden_section(f, lo, hi)
    return x if f(x) <= fs[k] else float(xs[k])


# -- method-specific clip selection ----------------------------------------------


def laplace_scale(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean(np.abs(x - np.median(x))))


def aciq_objective(t, b: float, bits: int, one_sided: bool = False):
    """Analytic MSE proxy: clipping tail(s) of a Laplace(b) plus uniform rounding noise."""
    t = np.asarray(t, dtype=np.float64)
    if one_sided:
        return b * b * np.exp(-t / b) + t * t / (12.0 * 4.0 ** bits)
    return 2.0 * b * b * np.exp(-t / b) + t * t / (3.0 * 4.0 ** bits)


def aciq_clip(samples, bits: int, one_sided: bool = False) -> float:
    """Clip magnitude minimizing :func:`aciq_objective` (convex in t)."""
    b = laplace_scale(samples)
    if b == 0:
        return 0.0
    # The minimizer lies well below 40 b for bits <= 8.
    return golden_section(lambda t: float(aciq_objective(t, b, bits, one_sided)), 1e-12, 40.0 * b, tol=1e-13)


def _descend(x, lo, hi, lo_max, hi_max, bits, p, rounds):
    best = lp_error(x, lo, hi, bits, p)
    for _ in range(rounds):
        prev = best
        if hi_max > 0:
            hi = scan_then_refine(lambda h: lp_error(x, lo, h, bits, p), hi_max * 1e-3, hi_max)
        if lo_max < 0:
            lo = scan_then_refine(lambda v: lp_error(x, v, hi, bits, p), lo_max, lo_max * 1e-3)
        best = lp_error(x, lo, hi, bits, p)
        if prev - best <= 1e-15:
            break
    return best, lo, hi


def lapq_clip(
    samples, bits: int, p: float = 2.0, rounds: int = 8, max_samples: int = 20_000, n_start: int = 33,
) -> tuple[float, float]:
    """Clip bounds minimizing the L_p quantization error.

    The error surface is piecewise smooth with many shallow basins, so
    coordinate descent runs from two starts: the full range and the best
    point of an ``n_start``-square grid over both bounds.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size > max_samples:
        x = x[np.linspace(0, x.size - 1, max_samples).astype(np.int64)]
    lo_max, hi_max = min(float(x.min()), 0.0), max(float(x.max()), 0.0)
    if lo_max == hi_max:
        return lo_max, hi_max
    starts = [(lo_max, hi_max)]
    if lo_max < 0 and hi_max > 0:
        grid = [(lp_error(x, u, v, bits, p), u, v)
                for u in np.linspace(lo_max, lo_max * 1e-3, n_start)
                for v in np.linspace(hi_max * 1e-3, hi_max, n_start)]
        starts.append(min(grid)[1:])
    best = min(_descend(x, lo, hi, lo_max, hi_max, bits, p, rounds) for lo, hi in starts)
    return best[1], best[2]


def calibrate(method: QuantMethod | str, samples, bits: int, p: float = 2.0) -> QuantParams:
    """Quantization parameters for ``samples`` at ``bits`` under ``method``.

    Non-negative samples (post-ReLU activations) get a one-sided range with
    zero point 0.
    """
    method = QuantMethod(method)
    _check_bits(bits)
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ParameterError("cannot calibrate on an empty tensor")
    non_negative = bool(x.min() >= 0)
    if method is QuantMethod.M1:
        m = float(np.abs(x).max())
        return params_from_range(0.0 if non_negative else -m, m, bits)
    if method is QuantMethod.M2:
        return params_from_range(x.min(), x.max(), bits)
    if method is QuantMethod.M3:
        return params_from_range(*lapq_clip(x, bits, p), bits)
    t = min(aciq_clip(x, bits, one_sided=non_negative), float(np.abs(x).max()))
    return params_from_range(0.0 if non_negative else -t, t, bits)


def calibrate_per_channel(method: QuantMethod | str, weights, bits: int, p: float = 2.0) -> list[QuantParams]:
    """One parameter set per output channel (row of ``weights``)."""
    return [calibrate(method, row, bits, p) for row in np.asarray(weights)]


def bias_correct(w_fp, w_q, params: QuantParams | Sequence[QuantParams]) -> np.ndarray:
    """Per-output-channel mean shift ``mean(w_fp) - mean(dequantized w)``.

    Adding the offset to every dequantized weight of a channel restores its
    floating-point mean; the layer folds it into the bias.
    """
    w_fp = np.asarray(w_fp, dtype=np.float64)
    w_q = np.asarray(w_q)
    if w_fp.shape != w_q.shape:
        raise ParameterError(f"shape mismatch {w_fp.shape} vs {w_q.shape}")
    if isinstance(params, QuantParams):
        w_hat = dequantize(params, w_q)
    else:
        w_hat = np.stack([dequantize(pc, row) for pc, row in zip(params, w_q)])
    return w_fp.mean(axis=1) - w_hat.mean(axis=1)
