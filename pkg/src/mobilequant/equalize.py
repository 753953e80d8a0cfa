"""Weight-equivalent transformation: per-channel scales fused into adjacent layers.

A placement names a producer/consumer pair sharing a channel dimension N.
The producer's output side is divided by S and the consumer's input rows
are multiplied by S, so the float function is unchanged:

    norm_qkv   norm1 affine  -> rows of q, k, v     (N = d_model)
    norm_mlp   norm2 affine  -> rows of gate, up    (N = d_model)
    up_down    cols of up    -> rows of down        (N = d_ff, the "Edge" scale)
    v_o        cols of v     -> rows of o           (N = d_model)

up_down is exact because S only enters the linear up branch of
act(gate) * up. v_o is exact because attention mixes tokens, not channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numeric as nm
from .model import PLACEMENTS, ActStats, ModelGraph, forward_float
from .numeric import Tensor

# placement -> (producer param, producer kind, consumer params, input tap of the consumers)
_LAYOUT = {
    "norm_qkv": ("norm1", "vector", ("q", "k", "v"), "attn.qkv_in"),
    "norm_mlp": ("norm2", "vector", ("gate", "up"), "mlp.in"),
    "up_down": ("up", "cols", ("down",), "mlp.down_in"),
    "v_o": ("v", "cols", ("o",), "attn.ctx"),
}


@dataclass
class ScaleVector:
    """Positive per-channel scale stored as logs so positivity is structural."""

    log_values: np.ndarray
    placement: str

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @classmethod
    def from_values(cls, values, placement: str) -> "ScaleVector":
        values = np.asarray(values, dtype=np.float64)
        if np.any(~(values > 0)) or not np.all(np.isfinite(values)):
            raise ValueError("scale values must be finite and positive")
        return cls(np.log(values), placement)


@dataclass(frozen=True)
class PlacementPlan:
    """Enabled placements, applied to every block."""

    placements: tuple[str, ...]
    n_blocks: int

    def __post_init__(self):
        bad = set(self.placements) - set(PLACEMENTS)
        if bad:
            raise ValueError(f"unsupported placement(s) {sorted(bad)}; scales cannot cross "
                             "non-multiplicative nonlinearities")

    @property
    def edge(self) -> bool:
        return "up_down" in self.placements

    def keys(self) -> list[str]:
        return [f"block{b}.{p}" for b in range(self.n_blocks) for p in PLACEMENTS if p in self.placements]


def _split(key: str) -> tuple[str, str]:
    block, placement = key.split(".", 1)
    return block, placement


def channel_count(model: ModelGraph, placement: str) -> int:
    return model.config.d_ff if placement == "up_down" else model.config.d_model


def smoothquant_init(act_absmax, w_absmax, alpha_hyper: float = 0.5, placement: str = "") -> ScaleVector:
    """s_i = max|X_i|^a / max|W_i|^(1 - a), returned in log space."""
    if not 0.0 <= alpha_hyper <= 1.0:
        raise ValueError("alpha_hyper must lie in [0, 1]")
    a = np.maximum(np.asarray(act_absmax, dtype=np.float64), 1e-8)
    w = np.maximum(np.asarray(w_absmax, dtype=np.float64), 1e-8)
    return ScaleVector(alpha_hyper * np.log(a) - (1.0 - alpha_hyper) * np.log(w), placement)


def init_scales(model: ModelGraph, stats: Mapping[str, ActStats], plan: PlacementPlan,
                alpha_hyper: float = 0.5) -> dict[str, ScaleVector]:
    """SmoothQuant-style initial scales for every enabled placement."""
    params = model.params()
    out = {}
    for key in plan.keys():
        block, placement = _split(key)
        _, _, consumers, tap = _LAYOUT[placement]
        act = stats[f"{block}.{tap}"].chan_absmax
        w_absmax = np.max(np.abs(np.concatenate([params[f"{block}.{c}"] for c in consumers], axis=1)), axis=1)
        out[key] = smoothquant_init(act, w_absmax, alpha_hyper, key)
    return out


def fuse_weights(w: Mapping[str, Tensor], scales: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Differentiable fusion. ``scales`` maps placement keys to S (not log S) tensors."""
    out = dict(w)
    for key, s in scales.items():
        block, placement = _split(key)
        if placement not in _LAYOUT:
            raise ValueError(f"unsupported placement {placement!r}")
        producer, kind, consumers, _ = _LAYOUT[placement]
        pname = f"{block}.{producer}"
        n_out = out[pname].shape[-1]
        if s.shape != (n_out,):
            raise ValueError(f"scale for {key} has shape {s.shape}, producer emits {n_out} channels")
        # vectors and weight columns both broadcast along the last axis
        out[pname] = nm.div(out[pname], s)
        col = nm.reshape(s, (n_out, 1))
        for c in consumers:
            cname = f"{block}.{c}"
            if out[cname].shape[0] != n_out:
                raise ValueError(f"consumer {cname} input dim does not match {key}")
            out[cname] = nm.mul(out[cname], col)
    return out


def _scale_values(s) -> np.ndarray:
    return s.values if isinstance(s, ScaleVector) else np.asarray(s, dtype=np.float64)


def fuse(model: ModelGraph, plan: PlacementPlan, scales: Mapping[str, "ScaleVector | np.ndarray"]) -> ModelGraph:
    """Return a new model with every enabled placement's scale folded into the weights."""
    if model.config.tied:
        raise ValueError("fusion with tied embeddings is not supported")
    keys = plan.keys()
    missing = set(keys) - set(scales)
    if missing:
        raise KeyError(f"no scale given for placements {sorted(missing)}")
    extra = set(scales) - set(keys)
    if extra:
        raise ValueError(f"scales given for disabled placements {sorted(extra)}")
    w = {k: nm.as_tensor(v) for k, v in model.params().items()}
    fused = fuse_weights(w, {k: nm.as_tensor(_scale_values(scales[k])) for k in keys})
    params = {k: v.data for k, v in fused.items()}
    return ModelGraph.from_params(model.config, params)


def verify_equivalence(m1: ModelGraph, m2: ModelGraph, sequences: Sequence[np.ndarray]) -> float:
    """max |dlogit| / (1 + |logit|) over all positions and vocab entries."""
    if m1.config != m2.config:
        raise ValueError("models have different topology")
    worst = 0.0
    for seq in sequences:
        a, b = forward_float(m1, seq), forward_float(m2, seq)
        worst = max(worst, float(np.max(np.abs(a - b) / (1.0 + np.abs(a)))))
    return worst
