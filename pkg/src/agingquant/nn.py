"""Toy MLP with integer inference on the compressed MAC.

The hardware computes unsigned ``A' * B' + C'`` only. Everything affine
quantization needs beyond that (zero-point cross terms, the bias zero point,
requantization to the next layer's lattice) happens in software around the
MAC array, as it does in integer inference stacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError, TrainingError
from .netlist import MAC_ACC_BITS
from .quant import (
    QuantMethod,
    QuantParams,
    bias_correct,
    calibrate,
    calibrate_per_channel,
    dequantize,
    quantize,
    round_half_away,
)
from .sta import OPERAND_BITS, CompressionConfig, Padding

PRODUCT_BITS = 2 * OPERAND_BITS
BIAS_BITS = 16


# -- data ------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    n_classes: int

    @property
    def x_train(self):
        return self.x[self.train_idx]

    @property
    def y_train(self):
        return self.y[self.train_idx]

    @property
    def x_test(self):
        return self.x[self.test_idx]

    @property
    def y_test(self):
        return self.y[self.test_idx]


def make_dataset(
    seed: int = 0,
    n_samples: int = 4000,
    n_features: int = 16,
    n_classes: int = 10,
    separation: float = 1.0,
    test_fraction: float = 0.2,
) -> Dataset:
    """Gaussian class clusters with unit within-class noise.

    Cluster centers are drawn with per-coordinate standard deviation
    ``separation``; larger values make the classes easier to tell apart.
    """
    if n_classes < 2 or n_features < 2:
        raise ParameterError("need at least 2 classes and 2 features")
    if n_samples < 2 * n_classes:
        raise ParameterError(f"n_samples={n_samples} too small for {n_classes} classes")
    if not 0 < test_fraction < 1:
        raise ParameterError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, size=(n_classes, n_features))
    y = rng.permutation(np.arange(n_samples) % n_classes)
    x = centers[y] + rng.normal(size=(n_samples, n_features))
    order = rng.permutation(n_samples)
    n_test = int(round(n_samples * test_fraction))
    return Dataset(x, y, np.sort(order[n_test:]), np.sort(order[:n_test]), seed, n_classes)


# -- floating-point model ---------------------------------------------------------


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray
    relu: bool


@dataclass
class Model:
    layers: list[Layer]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[0] != b.weights.shape[1]:
                raise ParameterError("layer dimensions do not chain")

    def activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Inputs to every layer followed by the final logits."""
        acts = [np.asarray(x, dtype=np.float64)]
        for layer in self.layers:
            z = acts[-1] @ layer.weights.T + layer.bias
            acts.append(np.maximum(z, 0.0) if layer.relu else z)
        return acts

    def logits(self, x):
        return self.activations(x)[-1]

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": "agingquant-model/1",
            "layers": [
                {"shape": list(l.weights.shape), "weights": l.weights.ravel().tolist(),
                 "bias": l.bias.tolist(), "relu": l.relu}
                for l in self.layers
            ],
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        layers = [Layer(np.array(l["weights"], dtype=np.float64).reshape(l["shape"]),
                        np.array(l["bias"], dtype=np.float64), bool(l["relu"])) for l in d["layers"]]
        return cls(layers, list(d.get("loss_history", [])))


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.log(p[np.arange(n), y] + 1e-300).mean())
    p[np.arange(n), y] -= 1.0
    return loss, p / n


def init_model(sizes: Sequence[int], seed: int) -> Model:
    rng = np.random.default_rng(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), relu=k < len(sizes) - 2))
    return Model(layers)


def train(
    dataset: Dataset,
    sizes: Sequence[int] = (16, 32, 32, 10),
    epochs: int = 40,
    lr: float = 0.05,
    seed: int = 0,
    batch_size: int = 32,
) -> Model:
    """Mini-batch SGD on softmax cross-entropy."""
    sizes = list(sizes)
    if sizes[0] != dataset.x.shape[1] or sizes[-1] != dataset.n_classes:
        raise ParameterError(f"layer sizes {sizes} do not fit the dataset")
    model = init_model(sizes, seed)
    rng = np.random.default_rng(seed + 1)
    x, y = dataset.x_train, dataset.y_train
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            acts = model.activations(x[idx])
            _, grad = _softmax_xent(acts[-1], y[idx])
            for k in range(len(model.layers) - 1, -1, -1):
                layer = model.layers[k]
                gw = grad.T @ acts[k]
                gb = grad.sum(axis=0)
                if k > 0:
                    grad = (grad @ layer.weights) * (acts[k] > 0)
                layer.weights -= lr * gw
                layer.bias -= lr * gb
        loss, _ = _softmax_xent(model.logits(x), y)
        if not np.isfinite(loss):
            raise TrainingError("training loss is not finite")
        model.loss_history.append(loss)
    return model


# -- quantized model ---------------------------------------------------------------


@dataclass
class QLayer:
    """One fully connected layer on the integer lattice.

    ``bias_codes`` are the C' operands fed to the MAC, unsigned in
    ``[0, 2**bias_bits)``; the represented bias is
    ``(bias_codes - bias_zero) * act.scale * weight scale``.
    """

    weight_codes: np.ndarray
    weight_params: list[QuantParams]
    act_params: QuantParams
    bias_codes: np.ndarray
    bias_zero: int
    bias_bits: int
    relu: bool

    @property
    def w_scale(self) -> np.ndarray:
        return np.broadcast_to(np.array([p.scale for p in self.weight_params]), (self.weight_codes.shape[0],))

    @property
    def w_zero(self) -> np.ndarray:
        zp = np.array([p.zero_point for p in self.weight_params], dtype=np.int64)
        return np.broadcast_to(zp, (self.weight_codes.shape[0],))


@dataclass
class QuantizedModel:
    layers: list[QLayer]
    alpha: int
    beta: int
    padding: Padding
    method: QuantMethod
    per_channel: bool = False
    bias_saturations: int = 0

    @property
    def compression(self) -> CompressionConfig:
        return CompressionConfig(self.alpha, self.beta, self.padding)

    def with_padding(self, padding: Padding | str) -> "QuantizedModel":
        """Same lattice, different zero padding (accuracy is padding-independent)."""
        return QuantizedModel(self.layers, self.alpha, self.beta, Padding(padding), self.method,
                              self.per_channel, self.bias_saturations)

    def to_dict(self) -> dict:
        return {
            "format": "agingquant-qmodel/1",
            "alpha": self.alpha,
            "beta": self.beta,
            "padding": self.padding.value,
            "method": self.method.value,
            "per_channel": self.per_channel,
            "bias_saturations": self.bias_saturations,
            "layers": [
                {
                    "shape": list(l.weight_codes.shape),
                    "weight_codes": l.weight_codes.ravel().tolist(),
                    "weight_params": [p.to_dict() for p in l.weight_params],
                    "act_params": l.act_params.to_dict(),
                    "bias_codes": l.bias_codes.tolist(),
                    "bias_zero": l.bias_zero,
                    "bias_bits": l.bias_bits,
                    "relu": l.relu,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedModel":
        layers = [
            QLayer(
                np.array(l["weight_codes"], dtype=np.int64).reshape(l["shape"]),
                [QuantParams.from_dict(p) for p in l["weight_params"]],
                QuantParams.from_dict(l["act_params"]),
                np.array(l["bias_codes"], dtype=np.int64),
                int(l["bias_zero"]),
                int(l["bias_bits"]),
                bool(l["relu"]),
            )
            for l in d["layers"]
        ]
        return cls(layers, int(d["alpha"]), int(d["beta"]), Padding(d["padding"]), QuantMethod(d["method"]),
                   bool(d["per_channel"]), int(d["bias_saturations"]))


def quantize_model(
    model: Model,
    method: QuantMethod | str,
    alpha: int,
    beta: int,
    calibration: np.ndarray,
    padding: Padding | str = Padding.MSB,
    per_channel: bool = False,
    p: float = 2.0,
) -> QuantizedModel:
    method = QuantMethod(method)
    a_bits, w_bits = OPERAND_BITS - alpha, OPERAND_BITS - beta
    if a_bits < 1 or w_bits < 1:
        raise ParameterError(f"compression ({alpha},{beta}) leaves no bits")
    if per_channel and method not in (QuantMethod.M4, QuantMethod.M5):
        raise ParameterError("per-channel scales are only offered for M4/M5")
    bias_bits = BIAS_BITS - alpha - beta
    bias_top = (1 << bias_bits) - 1
    acts = model.activations(calibration)
    qlayers = []
    saturations = 0
    for k, layer in enumerate(model.layers):
        ap = calibrate(method, acts[k], a_bits, p)
        if per_channel:
            wps = calibrate_per_channel(method, layer.weights, w_bits, p)
            wq = np.stack([quantize(wp, row) for wp, row in zip(wps, layer.weights)])
        else:
            wps = [calibrate(method, layer.weights, w_bits, p)]
            wq = quantize(wps[0], layer.weights)
        bias = layer.bias.copy()
        if method is QuantMethod.M4:
            offset = bias_correct(layer.weights, wq, wps if per_channel else wps[0])
            x_mean = dequantize(ap, quantize(ap, acts[k])).mean(axis=0)
            bias += offset * x_mean.sum()
        w_scale = np.array([wp.scale for wp in wps])
        signed = round_half_away(bias / (ap.scale * w_scale)).astype(np.int64)
        bias_zero = int(np.clip(-signed.min(), 0, bias_top))
        codes = signed + bias_zero
        saturations += int(np.count_nonzero((codes < 0) | (codes > bias_top)))
        qlayers.append(QLayer(wq, wps, ap, np.clip(codes, 0, bias_top), bias_zero, bias_bits, layer.relu))
    return QuantizedModel(qlayers, alpha, beta, Padding(padding), method, per_channel, saturations)


# -- integer inference ----------------------------------------------------------------


@dataclass
class Trace:
    """MAC operand stream in hardware (padded) form, one row per operation."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    alpha: int
    beta: int
    padding: Padding

    def as_ports(self) -> dict[str, np.ndarray]:
        return {"A": self.a, "B": self.b, "C": self.c}

    def save(self, path: str | Path) -> None:
        """Little-endian int32 columns after a one-line JSON header."""
        header = {"format": "agingquant-trace/1", "n": int(len(self.a)), "dtype": "<i4",
                  "columns": ["A", "B", "C"], "alpha": self.alpha, "beta": self.beta,
                  "padding": self.padding.value}
        with open(path, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            for col in (self.a, self.b, self.c):
                fh.write(np.asarray(col, dtype="<i4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "Trace":
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        if header.get("format") != "agingquant-trace/1":
            raise ParameterError(f"{path}: not a trace file")
        n = header["n"]
        cols = np.frombuffer(raw[nl + 1:], dtype="<i4").astype(np.int64).reshape(3, n)
        return cls(cols[0], cols[1], cols[2], header["alpha"], header["beta"], Padding(header["padding"]))


@dataclass
class InferenceResult:
    predictions: np.ndarray
    logits: np.ndarray
    overflows: int = 0
    trace: Trace | None = None
    codes: list[np.ndarray] = field(default_factory=list)


FLIP_TARGETS = ("product", "accumulator")


def _flip_masks(shape, p: float, top_bit: int, rng: np.random.Generator) -> np.ndarray:
    # Draws are taken for every operation regardless of p, so runs that share
    # a seed flip nested sets of operations as p grows.
    u = rng.random(shape)
    which = rng.random(shape) < 0.5
    bit = np.where(which, top_bit, top_bit - 1)
    return np.where(u < p, np.int64(1) << bit, np.int64(0))


def _flip_products(prod: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    return prod ^ _flip_masks(prod.shape, p, PRODUCT_BITS - 1, rng)


def _accumulate_with_flips(prod: np.ndarray, c_hw: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Run the MAC chain operation by operation, flipping output MSBs.

    Each operation's output feeds the next one's C operand, so a flip
    propagates down the chain; the accumulator wraps like the hardware.
    """
    masks = _flip_masks(prod.shape, p, MAC_ACC_BITS - 1, rng)
    wrap = (1 << MAC_ACC_BITS) - 1
    acc = np.broadcast_to(c_hw[None, :], prod.shape[:2]).copy()
    for j in range(prod.shape[2]):
        acc = ((acc + prod[:, :, j]) & wrap) ^ masks[:, :, j]
    return acc


def infer_quantized(
    qmodel: QuantizedModel,
    x: np.ndarray,
    record_trace: int = 0,
    flip_p: float = 0.0,
    rng: np.random.Generator | None = None,
    flip_target: str = "product",
) -> InferenceResult:
    """Integer-exact forward pass.

    ``record_trace`` keeps the MAC operand stream of the first that many
    samples. ``flip_p`` flips one of the two MSBs of each multiplication
    (``flip_target="product"``) or of each MAC output (``"accumulator"``)
    with that probability; it requires ``rng``.
    """
    if flip_target not in FLIP_TARGETS:
        raise ParameterError(f"flip target must be one of {FLIP_TARGETS}, got {flip_target!r}")
    cfg = qmodel.compression
    sa, sb = cfg.shift["A"], cfg.shift["B"]
    shift = sa + sb
    first = qmodel.layers[0].act_params
    codes = quantize(first, x)
    overflows = 0
    trace_parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    layer_codes = []
    for k, layer in enumerate(qmodel.layers):
        layer_codes.append(codes)
        ap = layer.act_params
        za = ap.zero_point
        wq = layer.weight_codes
        n_in = wq.shape[1]
        a_hw = codes << sa
        b_hw = wq << sb
        c_hw = layer.bias_codes << shift
        if flip_p > 0 or record_trace:
            prod = a_hw[:, None, :] * b_hw[None, :, :]
            if flip_p > 0 and rng is None:
                raise ParameterError("error injection needs an rng")
            if flip_p > 0 and flip_target == "product":
                prod = _flip_products(prod, flip_p, rng)
            if flip_p > 0 and flip_target == "accumulator":
                f_hw = _accumulate_with_flips(prod, c_hw, flip_p, rng)
            else:
                f_hw = prod.sum(axis=2) + c_hw
            if record_trace:
                m = min(record_trace, len(codes))
                running = np.cumsum(prod[:m], axis=2) - prod[:m] + c_hw[None, :, None]
                trace_parts.append((
                    np.broadcast_to(a_hw[:m, None, :], prod[:m].shape).ravel(),
                    np.broadcast_to(b_hw[None, :, :], prod[:m].shape).ravel(),
                    running.ravel(),
                ))
        else:
            f_hw = a_hw @ b_hw.T + c_hw
        overflows += int(np.count_nonzero((f_hw < 0) | (f_hw >= (1 << MAC_ACC_BITS))))
        if shift and flip_p == 0:
            f = codes @ wq.T + layer.bias_codes
            if not np.array_equal(f_hw, f << shift):
                raise AssertionError("LSB-padded accumulation is not the shifted unpadded result")
        acc = f_hw >> shift
        # Zero-point cross terms, accumulated outside the MAC array.
        total = (acc - layer.w_zero[None, :] * codes.sum(axis=1, keepdims=True)
                 - za * wq.sum(axis=1)[None, :] + n_in * za * layer.w_zero[None, :] - layer.bias_zero)
        overflows += int(np.count_nonzero(np.abs(total) >= (1 << (MAC_ACC_BITS - 1))))
        scale = ap.scale * layer.w_scale
        if k + 1 < len(qmodel.layers):
            nxt = qmodel.layers[k + 1].act_params
            mult = scale / nxt.scale
            q = round_half_away(total * mult[None, :]) + nxt.zero_point
            if layer.relu:
                q = np.maximum(q, nxt.zero_point)
            codes = np.clip(q, 0, nxt.levels - 1).astype(np.int64)
        else:
            logits = total * scale[None, :]
    trace = None
    if record_trace:
        trace = Trace(*(np.concatenate(col) for col in zip(*trace_parts)), cfg.alpha, cfg.beta, cfg.padding)
    return InferenceResult(np.argmax(logits, axis=1), logits, overflows, trace, layer_codes)


def infer_real_oracle(qmodel: QuantizedModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """The same quantized lattice evaluated in float64.

    Returns the activation codes entering each layer and the final logits.
    """
    h = np.asarray(x, dtype=np.float64)
    codes = []
    for layer in qmodel.layers:
        ap = layer.act_params
        codes.append(quantize(ap, h))
        xq = dequantize(ap, codes[-1])
        wps = layer.weight_params * (len(layer.weight_codes) if len(layer.weight_params) == 1 else 1)
        w = np.stack([dequantize(wp, row) for wp, row in zip(wps, layer.weight_codes)])
        b = (layer.bias_codes - layer.bias_zero) * ap.scale * layer.w_scale
        h = xq @ w.T + b
        if layer.relu:
            h = np.maximum(h, 0.0)
    return codes, h


def evaluate_accuracy(model: Model | QuantizedModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ParameterError("empty evaluation split")
    pred = infer_quantized(model, x).predictions if isinstance(model, QuantizedModel) else model.predict(x)
    return float(np.mean(pred == y))


@dataclass(frozen=True)
class InjectionResult:
    p: float
    trials: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.trials))

    @property
    def median(self) -> float:
        return float(np.median(self.trials))


def inject_errors(
    qmodel: QuantizedModel,
    x: np.ndarray,
    y: np.ndarray,
    p: float,
    trials: int = 10,
    seed: int = 0,
    target: str = "product",
) -> InjectionResult:
    """Accuracy under random MSB flips at ``target``, one seed per trial."""
    if not 0 <= p <= 1:
        raise ParameterError(f"flip probability must be in [0, 1], got {p}")
    accs = []
    for t in range(trials):
        if p == 0:
            pred = infer_quantized(qmodel, x).predictions
        else:
            rng = np.random.default_rng([seed, t])
            pred = infer_quantized(qmodel, x, flip_p=p, rng=rng, flip_target=target).predictions
        accs.append(float(np.mean(pred == y)))
    return InjectionResult(p, tuple(accs))
