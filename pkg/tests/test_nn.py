import numpy as np
import pytest

from agingquant.errors import ParameterError
from agingquant.netlist import MAC_ACC_BITS, evaluate
from agingquant.nn import (
    Model, QuantizedModel, Trace, _accumulate_with_flips, _flip_products, evaluate_accuracy, infer_quantized, infer_real_oracle,
    inject_errors, make_dataset, quantize_model, train,
)
from agingquant.quant import ALL_METHODS, QuantMethod
from agingquant.sta import Padding, constant_bits


@pytest.fixture(scope="module")
def cal(dataset):
    return dataset.x_train[:500]


def test_dataset_split_is_deterministic():
    a, b = make_dataset(3), make_dataset(3)
    np.testing.assert_array_equal(a.x_train, b.x_train)
    assert len(a.x_test) == 800 and len(set(a.train_idx) & set(a.test_idx)) == 0
    assert set(np.unique(a.y)) == set(range(10))


def test_training_is_deterministic(dataset, model):
    small = train(dataset, epochs=2, seed=1)
    again = train(dataset, epochs=2, seed=1)
    for l1, l2 in zip(small.layers, again.layers):
        np.testing.assert_array_equal(l1.weights, l2.weights)
    assert model.loss_history[-1] < model.loss_history[0]


def test_model_dict_roundtrip(dataset, model):
    back = Model.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.logits(dataset.x_test), model.logits(dataset.x_test))


@pytest.mark.parametrize("method", ALL_METHODS)
@pytest.mark.parametrize("ab", [(0, 0), (3, 2), (0, 5)])
def test_integer_path_matches_float_oracle(model, dataset, cal, method, ab):
    qm = quantize_model(model, method, *ab, cal)
    res = infer_quantized(qm, dataset.x_test)
    assert res.overflows == 0
    codes, logits = infer_real_oracle(qm, dataset.x_test)
    for mine, ref in zip(res.codes, codes):
        np.testing.assert_array_equal(mine, ref)
    np.testing.assert_allclose(res.logits, logits, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("method", [QuantMethod.M4, QuantMethod.M5])
def test_per_channel_matches_float_oracle(model, dataset, cal, method):
    qm = quantize_model(model, method, 2, 2, cal, per_channel=True)
    res = infer_quantized(qm, dataset.x_test)
    codes, logits = infer_real_oracle(qm, dataset.x_test)
    for mine, ref in zip(res.codes, codes):
        np.testing.assert_array_equal(mine, ref)
    np.testing.assert_allclose(res.logits, logits, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("ab", [(1, 1), (2, 3), (0, 6)])
def test_padding_does_not_change_results(model, dataset, cal, ab):
    msb = quantize_model(model, QuantMethod.M2, *ab, cal, padding=Padding.MSB)
    lsb = msb.with_padding(Padding.LSB)
    r1, r2 = infer_quantized(msb, dataset.x_test), infer_quantized(lsb, dataset.x_test)
    np.testing.assert_array_equal(r1.logits, r2.logits)


def test_bias_codes_fit_compressed_width(model, cal):
    qm = quantize_model(model, QuantMethod.M2, 3, 4, cal)
    for layer in qm.layers:
        assert layer.bias_bits == 16 - 7
        assert layer.bias_codes.min() >= 0 and layer.bias_codes.max() < 1 << layer.bias_bits
        assert layer.weight_codes.max() < 1 << 4


def test_trace_replays_on_mac(model, dataset, cal, mac):
    qm = quantize_model(model, QuantMethod.M3, 2, 1, cal, padding=Padding.LSB)
    tr = infer_quantized(qm, dataset.x_test[:3], record_trace=3).trace
    assert np.all(tr.a % 4 == 0) and np.all(tr.b % 2 == 0) and np.all(tr.c % 8 == 0)
    out = evaluate(mac, tr.as_ports())
    np.testing.assert_array_equal(out, (tr.a * tr.b + tr.c) % (1 << MAC_ACC_BITS))
    # Each operation's output is the next operation's accumulator input within a neuron.
    n_in = qm.layers[0].weight_codes.shape[1]
    first = slice(0, n_in)
    np.testing.assert_array_equal(out[first][:-1], tr.c[first][1:])


@pytest.mark.parametrize("padding", list(Padding))
@pytest.mark.parametrize("ab", [(1, 3), (4, 0), (2, 2)])
def test_trace_respects_constant_bits(model, dataset, cal, padding, ab):
    qm = quantize_model(model, QuantMethod.M5, *ab, cal, padding=padding)
    ports = infer_quantized(qm, dataset.x_test[:4], record_trace=4).trace.as_ports()
    for port, bit in constant_bits(qm.compression):
        assert not np.any((ports[port] >> bit) & 1), (port, bit)


def test_trace_file_roundtrip(tmp_path):
    tr = Trace(np.array([1, 2]), np.array([3, 4]), np.array([5, 1 << 21]), 1, 2, Padding.LSB)
    tr.save(tmp_path / "t.bin")
    back = Trace.load(tmp_path / "t.bin")
    for col in "abc":
        np.testing.assert_array_equal(getattr(back, col), getattr(tr, col))
    assert (back.alpha, back.beta, back.padding) == (1, 2, Padding.LSB)


def test_trace_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ParameterError):
        Trace.load(tmp_path / "x.bin")


def test_qmodel_dict_roundtrip(model, dataset, cal):
    qm = quantize_model(model, QuantMethod.M4, 1, 2, cal, per_channel=True)
    back = QuantizedModel.from_dict(qm.to_dict())
    np.testing.assert_array_equal(infer_quantized(back, dataset.x_test).logits,
                                  infer_quantized(qm, dataset.x_test).logits)


def test_injection_zero_probability_is_exact(model, dataset, cal):
    qm = quantize_model(model, QuantMethod.M2, 0, 0, cal)
    r = inject_errors(qm, dataset.x_test, dataset.y_test, 0.0, trials=3)
    assert r.trials == (evaluate_accuracy(qm, dataset.x_test, dataset.y_test),) * 3


def test_flips_hit_only_top_product_bits():
    prod = np.arange(1000, dtype=np.int64) * 37
    flipped = _flip_products(prod, 1.0, np.random.default_rng(0))
    diff = prod ^ flipped
    assert set(np.unique(diff)) == {1 << 14, 1 << 15}


def test_flip_sets_are_nested():
    prod = np.zeros(5000, dtype=np.int64)
    lo = _flip_products(prod, 0.01, np.random.default_rng(9)) != 0
    hi = _flip_products(prod, 0.1, np.random.default_rng(9)) != 0
    assert np.all(hi[lo]) and hi.sum() > lo.sum()


def test_accumulator_flips_hit_only_output_msbs():
    prod = np.arange(600, dtype=np.int64).reshape(20, 30, 1) * 7
    c = np.arange(30, dtype=np.int64)
    clean = prod[:, :, 0] + c
    flipped = _accumulate_with_flips(prod, c, 1.0, np.random.default_rng(0))
    assert set(np.unique(clean ^ flipped)) == {1 << 20, 1 << 21}


def test_accumulator_flips_propagate_down_the_chain():
    prod = np.ones((1, 1, 4), dtype=np.int64)
    out = _accumulate_with_flips(prod, np.zeros(1, dtype=np.int64), 1.0, np.random.default_rng(3))
    # four flips of bits 20/21, each carried into the next operation's C operand
    assert out[0, 0] & 0xFFFFF == 4 and out[0, 0] >> 20 in range(4)


def test_accumulator_injection_degrades(model, dataset, cal):
    qm = quantize_model(model, QuantMethod.M2, 0, 0, cal)
    base = evaluate_accuracy(qm, dataset.x_test, dataset.y_test)
    r = inject_errors(qm, dataset.x_test, dataset.y_test, 1e-2, trials=2, target="accumulator")
    assert r.median < base


def test_unknown_flip_target(model, dataset, cal):
    qm = quantize_model(model, QuantMethod.M2, 0, 0, cal)
    with pytest.raises(ParameterError):
        inject_errors(qm, dataset.x_test, dataset.y_test, 0.1, trials=1, target="register")


def test_injection_needs_valid_p(model, dataset, cal):
    qm = quantize_model(model, QuantMethod.M2, 0, 0, cal)
    with pytest.raises(ParameterError):
        inject_errors(qm, dataset.x_test, dataset.y_test, 1.5)


def test_compression_leaving_no_bits(model, cal):
    with pytest.raises(ParameterError):
        quantize_model(model, QuantMethod.M2, 8, 0, cal)


def test_per_channel_restricted(model, cal):
    with pytest.raises(ParameterError):
        quantize_model(model, QuantMethod.M2, 0, 0, cal, per_channel=True)
