import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilequant import numeric as nm
from mobilequant.quant import (
    ClipParams, QuantScheme, clip_weights, dequantize, fake_quant, fake_quant_composed, qmax, quantize,
    range_from_minmax, reconstruct, symmetric_range, weight_range,
)


def test_qmax():
    assert (qmax(8), qmax(4), qmax(16)) == (255, 15, 65535)


def test_range_examples():
    rp = range_from_minmax(0.0, 255.0, 8)
    assert float(rp.alpha) == 1.0 and float(rp.beta) == 0.0
    rp = range_from_minmax(-1.0, 1.0, 8)
    assert float(rp.alpha) == pytest.approx(2 / 255, rel=1e-15)
    assert float(rp.beta) == pytest.approx(-127.5, rel=1e-15)


def test_degenerate_range_floors_alpha():
    rp = range_from_minmax(0.3, 0.3, 8)
    assert float(rp.alpha) == 1e-8
    assert float(rp.beta) == pytest.approx(0.3 / 1e-8)


def test_inverted_range_rejected():
    with pytest.raises(ValueError):
        range_from_minmax(1.0, 0.0, 8)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-2, 1e3), st.sampled_from([4, 8, 16]))
def test_reconstruct_round_trip(lo, width, bits):
    hi = lo + width
    f_min, f_max = reconstruct(range_from_minmax(lo, hi, bits))
    ulp = np.spacing(max(abs(lo), abs(hi)))
    assert abs(float(f_min) - lo) <= 4 * ulp
    assert abs(float(f_max) - hi) <= 4 * ulp


def test_quantize_examples():
    assert float(quantize(0.0, 1.0, 0.0, 8).data) == 0.0
    assert float(quantize(3.4, 1.0, 0.0, 8).data) == 3.0
    assert float(quantize(10.0, 2 / 255, -127.5, 8).data) == 255.0


def test_dequantize_examples():
    assert float(dequantize(0.0, 1.0, 0.0).data) == 0.0
    assert float(dequantize(255.0, 2 / 255, -127.5).data) == pytest.approx(1.0, rel=1e-15)


def test_grid_points_are_fixed():
    rp = range_from_minmax(-2.0, 2.0, 8)
    beta = np.round(rp.beta)
    x = (np.arange(256.0) + beta) * rp.alpha
    assert np.array_equal(fake_quant(x, rp.alpha, beta, 8).data, x)


@pytest.mark.parametrize("shape", [(64,), (7, 9)])
def test_fused_matches_composed(shape):
    rng = np.random.default_rng(0)
    x = rng.normal(scale=2.0, size=shape)
    alpha, beta = 0.03, -60.3
    grads = []
    for fn in (fake_quant, fake_quant_composed):
        ps = nm.parameter(x, "x"), nm.parameter(alpha, "a"), nm.parameter(beta, "b")
        y = fn(*ps, 8)
        grads.append((y.data, nm.backward(nm.sum_(nm.mul(y, np.cos(x))))))
    (y0, g0), (y1, g1) = grads
    assert np.allclose(y0, y1, rtol=0, atol=1e-12)
    for k in ("x", "a", "b"):
        assert np.allclose(g0[k], g1[k], rtol=1e-10, atol=1e-10), k


def test_per_channel_fake_quant_gradients_match_composed():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(5, 4))
    alpha = rng.uniform(0.01, 0.05, size=(1, 4))
    beta = rng.uniform(-100, -20, size=(1, 4))
    out = []
    for fn in (fake_quant, fake_quant_composed):
        a, b = nm.parameter(alpha, "a"), nm.parameter(beta, "b")
        out.append(nm.backward(nm.sum_(nm.mul(fn(w, a, b, 8), w))))
    for k in ("a", "b"):
        assert np.allclose(out[0][k], out[1][k], rtol=1e-10, atol=1e-12)


def test_clip_weights_examples():
    w = np.array([[-3.0, 4.0], [1.0, 2.0]])
    scheme = QuantScheme(8)
    clipped, alpha, beta = clip_weights(w, np.inf, np.inf, scheme)
    assert np.array_equal(clipped.data, w)
    assert float(alpha.data) == pytest.approx(7 / 255)
    cp = ClipParams.from_gamma(1.0, 0.5)
    clipped, _, _ = clip_weights(w, cp.theta_min, cp.theta_max, scheme)
    assert clipped.data.max() == 2.0


def test_clip_init_is_nearly_unclipped():
    cp = ClipParams.init(())
    assert float(cp.gamma_max) == pytest.approx(0.999)


def test_learned_clip_reduces_w4_error():
    """A few steps of gradient descent on the clip logits beat gamma = 1."""
    rng = np.random.default_rng(2)
    w = rng.standard_t(3, size=(64, 32)) * 0.1
    scheme = QuantScheme(4, axis=1)

    def mse(tmin, tmax):
        c, a, b = clip_weights(w, tmin, tmax, scheme)
        d = nm.sub(fake_quant(c, a, b, 4), w)
        return nm.mean(nm.mul(d, d))

    base = float(mse(np.full((1, 32), np.inf), np.full((1, 32), np.inf)).data)
    tmin, tmax = np.full((1, 32), 3.0), np.full((1, 32), 3.0)
    for _ in range(200):
        g = nm.backward(mse(nm.parameter(tmin, "lo"), nm.parameter(tmax, "hi")))
        tmin = tmin - 20.0 * g["lo"] / (np.abs(g["lo"]).max() + 1e-12) * 0.05
        tmax = tmax - 20.0 * g["hi"] / (np.abs(g["hi"]).max() + 1e-12) * 0.05
    assert float(mse(tmin, tmax).data) <= base


def test_symmetric_range_examples():
    rp = symmetric_range(np.array([[-1.0], [1.0]]), 4, axis=1)
    assert float(rp.alpha.squeeze()) == pytest.approx(2 / 15)
    codes = quantize(0.0, rp.alpha, rp.beta, 4)
    assert float(dequantize(codes, rp.alpha, rp.beta).data.squeeze()) == 0.0


def test_symmetric_zero_channel_floor():
    rp = symmetric_range(np.zeros((3, 2)), 8, axis=1)
    assert np.all(rp.alpha == 1e-8)


def test_symmetric_worse_on_biased_weights():
    rng = np.random.default_rng(3)
    w = rng.uniform(0.0, 1.0, size=(32, 16))
    errs = []
    for sym in (True, False):
        rp = weight_range(w, ClipParams(np.full((1, 16), np.inf)), QuantScheme(4, axis=1, symmetric=sym))
        errs.append(float(np.mean((fake_quant(w, rp.alpha, rp.beta, 4).data - w) ** 2)))
    assert errs[0] >= errs[1]


def test_bad_scheme():
    with pytest.raises(ValueError):
        QuantScheme(3)
    with pytest.raises(ValueError):
        clip_weights(np.ones((2, 2, 2)), 0.0, 0.0, QuantScheme(8, axis=1))


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(0.05, 5.0), st.sampled_from([4, 8, 16]))
def test_codes_bounded_and_interior_error(x, width, bits):
    rp = range_from_minmax(-width, width, bits)
    c = float(quantize(x, rp.alpha, rp.beta, bits).data)
    assert 0.0 <= c <= qmax(bits)
    if -width < x < width:
        assert abs(float(fake_quant(x, rp.alpha, rp.beta, bits).data) - x) <= float(rp.alpha) / 2 + 1e-12
