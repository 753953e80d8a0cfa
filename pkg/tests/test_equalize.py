import numpy as np
import pytest

from mobilequant import numeric as nm
from mobilequant.equalize import (
    PlacementPlan, ScaleVector, fuse, fuse_weights, init_scales, smoothquant_init, verify_equivalence,
)
from mobilequant.model import PLACEMENTS, ModelConfig, ModelGraph, collect_model_stats, init_model


def _plan(model, placements=PLACEMENTS):
    return PlacementPlan(tuple(placements), model.config.n_blocks)


def _random_scales(model, plan, rng, lo=0.1, hi=10.0):
    out = {}
    for key in plan.keys():
        n = model.config.d_ff if key.endswith("up_down") else model.config.d_model
        out[key] = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    return out


def test_smoothquant_init_examples():
    assert smoothquant_init([4.0], [1.0], 0.5).values[0] == pytest.approx(2.0)
    a = np.array([0.5, 3.0, 7.0])
    assert np.allclose(smoothquant_init(a, [9.0, 1.0, 2.0], 1.0).values, a)
    assert np.allclose(smoothquant_init(a, [4.0, 2.0, 0.5], 0.0).values, [0.25, 0.5, 2.0])
    with pytest.raises(ValueError):
        smoothquant_init(a, a, 1.5)


def test_smoothquant_init_floors_zero_stats():
    s = smoothquant_init([0.0], [0.0], 0.5)
    assert np.isfinite(s.values).all() and s.values[0] > 0


def test_scale_vector_positive():
    with pytest.raises(ValueError):
        ScaleVector.from_values([1.0, 0.0], "block0.norm_qkv")
    assert np.all(ScaleVector.from_values([1.0, 2.0], "x").values > 0)


def test_ones_leave_model_unchanged(small_model):
    plan = _plan(small_model)
    ones = {k: np.ones(v.size) for k, v in _random_scales(small_model, plan, np.random.default_rng(0)).items()}
    fused = fuse(small_model, plan, ones)
    assert all(fused.params()[k].tobytes() == v.tobytes() for k, v in small_model.params().items())


def test_random_scales_preserve_function(small_model):
    rng = np.random.default_rng(1)
    plan = _plan(small_model)
    seqs = [rng.integers(0, 32, size=(16, 12))]
    fused = fuse(small_model, plan, _random_scales(small_model, plan, rng))
    assert verify_equivalence(small_model, fused, seqs) <= 1e-5


def test_fuse_does_not_mutate(small_model):
    before = {k: v.copy() for k, v in small_model.params().items()}
    plan = _plan(small_model)
    fuse(small_model, plan, _random_scales(small_model, plan, np.random.default_rng(2)))
    assert all(np.array_equal(before[k], v) for k, v in small_model.params().items())


def test_up_down_identity():
    """silu(gate) * (up / s) scaled back by s on the down rows is the same product."""
    rng = np.random.default_rng(3)
    x, wg, wu, wd = rng.normal(size=(5, 6)), rng.normal(size=(6, 8)), rng.normal(size=(6, 8)), rng.normal(size=(8, 6))
    s = rng.uniform(0.1, 10, 8)
    ref = (nm.silu(x @ wg).data * (x @ wu)) @ wd
    got = (nm.silu(x @ wg).data * (x @ (wu / s))) @ (wd * s[:, None])
    assert np.allclose(ref, got, rtol=1e-12, atol=1e-12)


def test_composition(small_model):
    rng = np.random.default_rng(4)
    plan = _plan(small_model)
    s1, s2 = _random_scales(small_model, plan, rng), _random_scales(small_model, plan, rng)
    twice = fuse(fuse(small_model, plan, s1), plan, s2)
    once = fuse(small_model, plan, {k: s1[k] * s2[k] for k in s1})
    for k, v in once.params().items():
        ulp = np.spacing(np.maximum(np.abs(v), np.abs(twice.params()[k])))
        assert np.all(np.abs(v - twice.params()[k]) <= 4 * ulp), k


def test_detector_catches_perturbation(small_model):
    params = small_model.params()
    params["block0.o"] = params["block0.o"] + 1e-3
    bad = ModelGraph.from_params(small_model.config, params)
    seqs = [np.arange(10) % 32]
    assert verify_equivalence(small_model, small_model, seqs) == 0.0
    assert verify_equivalence(small_model, bad, seqs) > 1e-5


def test_fuse_errors(small_model):
    plan = _plan(small_model, ["norm_qkv"])
    with pytest.raises(KeyError):
        fuse(small_model, plan, {})
    with pytest.raises(ValueError):
        fuse(small_model, plan, {"block0.norm_qkv": np.ones(3)})
    with pytest.raises(ValueError):
        fuse(small_model, plan, {"block0.norm_qkv": np.ones(16), "block0.up_down": np.ones(32)})
    with pytest.raises(ValueError):
        PlacementPlan(("gate_up",), 1)
    with pytest.raises(ValueError):
        fuse_weights({k: nm.as_tensor(v) for k, v in small_model.params().items()},
                     {"block0.act_down": nm.as_tensor(np.ones(32))})
    with pytest.raises(ValueError):
        verify_equivalence(small_model, init_model(ModelConfig(vocab=32, d_model=16, n_heads=4, d_ff=32,
                                                               n_blocks=1)), [np.arange(4)])


def test_tied_model_rejected():
    tied = init_model(ModelConfig(vocab=16, d_model=8, n_heads=2, d_ff=16, n_blocks=1, tied=True))
    plan = _plan(tied, ["norm_qkv"])
    with pytest.raises(ValueError):
        fuse(tied, plan, {"block0.norm_qkv": np.ones(8)})


def test_init_scales_cover_plan(small_model):
    stats = collect_model_stats(small_model, [np.arange(12).reshape(2, 6)])
    plan = _plan(small_model, ["norm_qkv", "norm_mlp", "up_down"])
    scales = init_scales(small_model, stats, plan)
    assert sorted(scales) == sorted(plan.keys())
    assert scales["block0.up_down"].values.shape == (32,)
