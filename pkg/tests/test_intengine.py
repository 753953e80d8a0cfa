from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilequant.calibrate import CalibConfig, calibrate
from mobilequant.fileformat import FormatError, save_float_model
from mobilequant.intengine import (
    AccumulatorOverflow, FixedPointAdd, FixedPointRequant, FloatOpCounter, RequantRangeError, compile_calibrated,
    encode_quantized, generate, int_forward, int_linear, load_quantized, save_quantized, shift_round_half_even,
)
from mobilequant.model import forward_fakequant, make_qconfig
from mobilequant.quant import qmax


def _round_half_even(fr: Fraction) -> int:
    return round(fr)  # Fraction.__round__ ties to even


def test_requant_example_power_of_two():
    fp = FixedPointRequant.from_real(2.0 ** -10)
    assert int(fp.multiplier) == 1 << 30 and int(fp.shift) == 9
    assert float(fp.real) == 2.0 ** -10


def test_requant_above_one_uses_negative_shift():
    fp = FixedPointRequant.from_real(3.0)
    assert int(fp.shift) == -2
    assert float(fp.real) == 3.0
    assert fp.apply(np.array([5, -7])).tolist() == [15, -21]


@settings(max_examples=300, deadline=None)
@given(st.floats(2.0 ** -30, 2.0 ** 29))
def test_requant_relative_error(r):
    fp = FixedPointRequant.from_real(r)
    assert (1 << 30) <= int(fp.multiplier) < (1 << 31)
    assert abs(float(fp.real) - r) / r <= 2.0 ** -30


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-6, 4.0), st.integers(-(2 ** 31) + 1, 2 ** 31 - 1))
def test_requant_apply_is_exact_rounding(r, acc):
    fp = FixedPointRequant.from_real(r)
    exact = Fraction(acc) * Fraction(int(fp.multiplier), 2 ** (31 + int(fp.shift)))
    assert int(fp.apply(np.array([acc]))[0]) == _round_half_even(exact)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan, 2.0 ** -40, 2.0 ** 40])
def test_requant_range_errors(bad):
    with pytest.raises(RequantRangeError):
        FixedPointRequant.from_real(bad)


def test_requant_rejects_bad_fields():
    with pytest.raises(RequantRangeError):
        FixedPointRequant(np.int64(5), np.int64(0))
    with pytest.raises(RequantRangeError):
        FixedPointRequant(np.int64(1 << 30), np.int64(-31))


def test_shift_round_half_even_ties():
    v = np.array([1, 2, 3, 5, 6, 7, -1, -2, -3, -5, -6])
    assert shift_round_half_even(v, 1).tolist() == [0, 1, 2, 2, 3, 4, 0, -1, -2, -2, -3]
    assert shift_round_half_even(np.array([6, 10, 14]), 2).tolist() == [2, 2, 4]


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 8.0), st.floats(1e-3, 8.0), st.integers(-255, 255), st.integers(-255, 255))
def test_fixed_point_add_near_exact(ra, rb, a, b):
    fa = FixedPointAdd.from_ratios(ra, rb)
    got = int(fa.apply(np.array([a], np.int64), np.array([b], np.int64))[0])
    assert abs(got - (ra * a + rb * b)) <= 0.5 + 1e-6


def test_int_linear_examples():
    one = FixedPointRequant.from_real(1.0)
    x = np.zeros((2, 3), np.int64) + 7
    w = np.ones((3, 4), np.uint8) * 9
    assert int_linear(x, w, 7, 9, one, 11, 8).tolist() == [[11] * 4] * 2
    assert int_linear(np.array([[5]]), np.array([[6]], np.uint8), 0, 0, one, 0, 8).tolist() == [[30]]
    assert int_linear(np.array([[5]]), np.array([[6]], np.uint8), 0, 0, one, 0, 4).tolist() == [[15]]


def test_int_linear_rejects_float_and_shapes():
    one = FixedPointRequant.from_real(1.0)
    with pytest.raises(TypeError):
        int_linear(np.ones((1, 2)), np.ones((2, 2), np.uint8), 0, 0, one, 0, 8)
    with pytest.raises(ValueError):
        int_linear(np.ones((1, 3), np.int64), np.ones((2, 2), np.uint8), 0, 0, one, 0, 8)


def test_int_linear_overflow_detected():
    one = FixedPointRequant.from_real(2.0 ** -20)
    x = np.full((1, 40000), 65535, np.int64)
    w = np.full((40000, 1), 255, np.uint8)
    with pytest.raises(AccumulatorOverflow):
        int_linear(x, w, 0, 0, one, 0, 8)


# -- compiled toy model -----------------------------------------------------------------

@pytest.fixture(scope="module")
def compiled(toy, tokens):
    out = {}
    for scheme in ("w8a8", "w4a8"):
        qc = make_qconfig(scheme, toy.config)
        cal = calibrate(toy, tokens, qc, CalibConfig(num_samples=32, epochs=1))
        out[scheme] = (compile_calibrated(toy, cal, qc), cal, qc)
    return out


@pytest.mark.parametrize("scheme", ["w8a8", "w4a8"])
def test_weight_codes_in_range(compiled, scheme):
    qm = compiled[scheme][0]
    for ql in qm.linears.values():
        assert ql.codes.dtype == np.uint8 and int(ql.codes.max()) <= ql.scheme.qmax
        assert np.all((ql.zero_point >= 0) & (ql.zero_point <= ql.scheme.qmax))


@pytest.mark.parametrize("scheme", ["w8a8", "w4a8"])
def test_export_round_trip(compiled, scheme, tmp_path, held):
    qm = compiled[scheme][0]
    first = save_quantized(tmp_path / "a.qfg", qm)
    again = load_quantized(tmp_path / "a.qfg")
    assert encode_quantized(again) == first
    seq = held[:48][None, :]
    assert np.array_equal(int_forward(again, seq).logits, int_forward(qm, seq).logits)


def test_w4_file_packs_nibbles(compiled):
    assert len(encode_quantized(compiled["w4a8"][0])) < len(encode_quantized(compiled["w8a8"][0]))


def test_load_rejects_float_file(tmp_path, toy):
    save_float_model(tmp_path / "f.qfg", toy)
    with pytest.raises(FormatError):
        load_quantized(tmp_path / "f.qfg")


def test_traces_stay_within_bitwidth(compiled, held):
    qm = compiled["w8a8"][0]
    res = int_forward(qm, held[:64][None, :], trace=True)
    assert set(res.traces) == set(qm.taps)
    for name, codes in res.traces.items():
        bits = qm.taps[name].bits
        assert np.issubdtype(codes.dtype, np.integer), name
        assert codes.min() >= 0 and codes.max() <= qmax(bits), name


def test_no_float_on_integer_paths(compiled, held):
    counter = FloatOpCounter()
    int_forward(compiled["w4a8"][0], held[:32][None, :], counter=counter)
    assert counter.linear_float_ops() == 0
    assert counter.report()["softmax"] > 0


def test_decode_matches_prefill(compiled, held):
    qm = compiled["w8a8"][0]
    seq = held[:40][None, :]
    full = int_forward(qm, seq).logits
    res = int_forward(qm, seq[:, :32])
    steps = [res.logits[:, -1]]
    for t in range(32, 40):
        res = int_forward(qm, seq[:, t:t + 1], cache=res.cache)
        steps.append(res.logits[:, -1])
    assert res.cache.length == 40
    assert np.array_equal(np.stack(steps[:-1], 1), full[:, 31:39])


def test_greedy_generation_matches_fake_quant(compiled, toy, held):
    """Each generated token is also the fake-quant argmax given the same prefix."""
    qm, cal, qc = compiled["w8a8"]
    prompt = held[:32]
    out = generate(qm, prompt, 512)
    assert len(out) == 544
    logits = forward_fakequant(cal.fused_model(toy), out, qc, cal.qparams.rounded())
    agree = np.mean(np.argmax(logits[31:-1], axis=-1) == out[32:])
    assert agree >= 0.99


def test_wide_activations_cannot_compile(toy, tokens):
    qc = make_qconfig("w8a16", toy.config)
    cal = calibrate(toy, tokens, qc, CalibConfig(num_samples=8, epochs=0, eval_samples=8))
    with pytest.raises(AccumulatorOverflow):
        compile_calibrated(toy, cal, qc)
