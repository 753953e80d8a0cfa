import numpy as np
import pytest

from mobilequant.calibrate import CalibConfig, calibrate, calibration_windows
from mobilequant.model import (
    BLOCK_TAPS, ModelConfig, ModelGraph, QConfig, forward_fakequant, forward_float, init_model, make_qconfig,
    perplexity, tap_list, tap_names, uniform_qconfig,
)


def test_single_token_logits_shape(small_model):
    assert forward_float(small_model, [3]).shape == (1, small_model.config.vocab)


def test_batch_order_independent(small_model):
    rng = np.random.default_rng(0)
    batch = rng.integers(0, 32, size=(4, 7))
    perm = np.array([2, 0, 3, 1])
    assert np.array_equal(forward_float(small_model, batch)[perm], forward_float(small_model, batch[perm]))


def test_causal(small_model):
    rng = np.random.default_rng(1)
    seq = rng.integers(0, 32, size=10)
    edited = seq.copy()
    edited[6:] = (edited[6:] + 5) % 32
    a, b = forward_float(small_model, seq), forward_float(small_model, edited)
    assert np.array_equal(a[:6], b[:6])
    assert not np.array_equal(a[6:], b[6:])


def test_token_and_length_errors(small_model):
    with pytest.raises(ValueError):
        forward_float(small_model, [32])
    with pytest.raises(ValueError):
        forward_float(small_model, [-1])
    with pytest.raises(ValueError):
        forward_float(small_model, np.zeros(small_model.config.max_seq_len + 1, int))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(nonlinearity="relu")


def test_tap_list_one_block(small_config, small_model):
    taps = tap_list(small_model)
    # embed.out, 18 per block, head.in, head.logits
    assert len(taps) == 1 + len(BLOCK_TAPS) + 2 == 21
    names = [t.name for t in taps]
    assert len(set(names)) == len(names)
    assert names == [t.name for t in tap_list(small_model)]


@pytest.mark.parametrize("scheme", ["w8a8", "w4a8", "w4a8-sym", "w8a16", "full-w8a8"])
def test_qconfig_covers_every_tap_and_linear(small_config, scheme):
    qc = make_qconfig(scheme, small_config)
    qc.check(small_config)
    assert set(qc.acts) == set(tap_names(small_config))
    assert QConfig.from_dict(qc.to_dict()) == qc


def test_scheme_details(small_config):
    w8 = make_qconfig("w8a8", small_config)
    assert w8.weights["block0.down"].axis == 1 and w8.weights["block0.q"].axis is None
    assert w8.acts["block0.attn.probs"] == 16 and w8.acts["block0.attn.qkv_in"] == 8
    w4 = make_qconfig("w4a8-sym", small_config)
    assert all(s.bits == 4 and s.symmetric and s.axis == 1 for s in w4.weights.values())
    assert set(make_qconfig("full-w8a8", small_config).acts.values()) == {8}
    assert set(make_qconfig("w8a16", small_config).acts.values()) == {16}
    with pytest.raises(ValueError):
        make_qconfig("w2a2", small_config)


def test_qconfig_mismatch_detected(small_config):
    qc = make_qconfig("w8a8", ModelConfig(vocab=32, d_model=16, n_heads=2, d_ff=32, n_blocks=2))
    with pytest.raises(ValueError):
        qc.check(small_config)


def test_uniform_logits_perplexity_is_vocab(small_model):
    params = small_model.params()
    params["head"] = np.zeros_like(params["head"])
    flat = ModelGraph.from_params(small_model.config, params)
    seq = np.random.default_rng(2).integers(0, 32, 50)
    assert perplexity(flat, seq) == pytest.approx(32.0, rel=1e-12)


def test_perplexity_needs_two_tokens(small_model):
    with pytest.raises(ValueError):
        perplexity(small_model, [1])


def test_model_round_trips_params(small_model):
    again = ModelGraph.from_params(small_model.config, small_model.params())
    assert all(np.array_equal(a, again.params()[k]) for k, a in small_model.params().items())


def test_gelu_variant_runs():
    m = init_model(ModelConfig(vocab=16, d_model=8, n_heads=2, d_ff=16, n_blocks=1, nonlinearity="gelu"))
    assert np.all(np.isfinite(forward_float(m, np.arange(6))))


def test_trained_beats_random_tokens(toy, held):
    rng = np.random.default_rng(3)
    assert 1.0 < perplexity(toy, held) < perplexity(toy, rng.integers(0, 256, len(held)))


def test_wide_fakequant_tracks_float(toy, tokens, held):
    """At 16 bits only range coverage matters: inside calibrated ranges the error is rounding."""
    qc = uniform_qconfig(toy.config, 16, 16)
    cfg = CalibConfig(epochs=0, num_samples=64)
    cal = calibrate(toy, tokens, qc, cfg)
    fused = cal.fused_model(toy)
    windows, _ = calibration_windows(tokens, cfg)
    dev = np.abs(forward_fakequant(fused, windows, qc, cal.qparams.rounded()) - forward_float(toy, windows)).max()
    assert dev < 1e-2
    fq = perplexity(fused, held, "fakequant", qc, cal.qparams.rounded())
    fl = perplexity(toy, held)
    assert abs(fq - fl) / fl < 1e-3
