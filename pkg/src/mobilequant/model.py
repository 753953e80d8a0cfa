"""LLaMA-style transformer blocks with named activation taps.

One forward routine serves every execution mode. It is parameterized by a
context object that decides what happens at each weight read and each
activation tap: nothing (float), min/max recording (stats), or fake
quantization. The integer engine mirrors the same tap order in
``intengine``.

Tap map per block ``block{b}`` (bits under the MobileQuant schemes):

    attn.qkv_in   8   norm1 output, shared input of q/k/v
    attn.q_out   16   q projection output (rope input)
    attn.k_out   16   k projection output (rope input)
    attn.v_out    8   v projection output
    attn.q_rot    8   rotated q, score matmul operand
    attn.k_rot   16   rotated k, score matmul operand
    attn.scores  16   scaled q.k^T (softmax input)
    attn.probs   16   softmax output
    attn.ctx      8   probs.v, o projection input
    attn.o_out    8   o projection output
    attn.resid   16   residual stream after attention
    mlp.in        8   norm2 output, shared input of gate/up
    mlp.gate_out 16   gate projection output (activation input)
    mlp.act_out  16   SiLU/GELU output
    mlp.up_out    8   up projection output
    mlp.down_in   8   act * up, down projection input
    mlp.down_out  8   down projection output
    mlp.resid    16   residual stream after the MLP

plus ``embed.out`` (16), ``head.in`` (8) and ``head.logits`` (16).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import numeric as nm
from .numeric import Tensor
from .quant import ClipParams, QuantScheme, RangeParams, clip_params_for, clip_weights, fake_quant, qmax

MAX_SEQ_LEN = 2048

BLOCK_TAPS = (
    "attn.qkv_in", "attn.q_out", "attn.k_out", "attn.v_out", "attn.q_rot", "attn.k_rot",
    "attn.scores", "attn.probs", "attn.ctx", "attn.o_out", "attn.resid",
    "mlp.in", "mlp.gate_out", "mlp.act_out", "mlp.up_out", "mlp.down_in", "mlp.down_out",
    "mlp.resid",
)
# taps held at 16 bits by the MobileQuant schemes: nonlinear-operator I/O,
# the k operand of the score matmul and the residual stream
WIDE_TAPS = frozenset({
    "attn.q_out", "attn.k_out", "attn.k_rot", "attn.scores", "attn.probs", "attn.resid",
    "mlp.gate_out", "mlp.act_out", "mlp.resid", "embed.out", "head.logits",
})
LINEARS = ("q", "k", "v", "o", "gate", "up", "down")
PLACEMENTS = ("norm_qkv", "norm_mlp", "up_down", "v_o")
DEFAULT_PLACEMENTS = ("norm_qkv", "norm_mlp", "up_down")
SCHEMES = ("w8a8", "w4a8", "w4a8-sym", "w8a16", "full-w8a8")


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 256
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_blocks: int = 2
    nonlinearity: str = "silu"
    max_seq_len: int = MAX_SEQ_LEN
    rope_base: float = 10000.0
    eps: float = 1e-6
    tied: bool = False

    def __post_init__(self):
        if min(self.vocab, self.d_model, self.n_heads, self.d_ff, self.n_blocks) < 1:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("head dim must be even for rotary embeddings")
        if self.nonlinearity not in ("silu", "gelu"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BlockSpec:
    """Weights of one block. Linear weights are [d_in, d_out] (y = x @ W)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    gate: np.ndarray
    up: np.ndarray
    down: np.ndarray
    norm1: np.ndarray
    norm2: np.ndarray


@dataclass
class ModelGraph:
    config: ModelConfig
    embed: np.ndarray
    blocks: list[BlockSpec]
    final_norm: np.ndarray
    head: np.ndarray | None = None

    def __post_init__(self):
        cfg = self.config
        d, f = cfg.d_model, cfg.d_ff
        expected = {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "gate": (d, f),
                    "up": (d, f), "down": (f, d), "norm1": (d,), "norm2": (d,)}
        if len(self.blocks) != cfg.n_blocks:
            raise ValueError("block count does not match config")
        for b, blk in enumerate(self.blocks):
            for name, shape in expected.items():
                if getattr(blk, name).shape != shape:
                    raise ValueError(f"block{b}.{name} has shape {getattr(blk, name).shape}, expected {shape}")
        if self.embed.shape != (cfg.vocab, d) or self.final_norm.shape != (d,):
            raise ValueError("embedding or final norm shape mismatch")
        if cfg.tied != (self.head is None):
            raise ValueError("head must be None exactly when the projection is tied")
        if self.head is not None and self.head.shape != (d, cfg.vocab):
            raise ValueError("head shape mismatch")

    def params(self) -> dict[str, np.ndarray]:
        out = {"embed": self.embed}
        for b, blk in enumerate(self.blocks):
            for name in (*LINEARS, "norm1", "norm2"):
                out[f"block{b}.{name}"] = getattr(blk, name)
        out["final_norm"] = self.final_norm
        out["head"] = self.head if self.head is not None else self.embed.T
        return out

    @classmethod
    def from_params(cls, config: ModelConfig, params: Mapping[str, np.ndarray]) -> "ModelGraph":
        blocks = [BlockSpec(**{n: np.asarray(params[f"block{b}.{n}"], dtype=np.float64)
                               for n in (*LINEARS, "norm1", "norm2")})
                  for b in range(config.n_blocks)]
        head = None if config.tied else np.asarray(params["head"], dtype=np.float64)
        return cls(config, np.asarray(params["embed"], dtype=np.float64), blocks,
                   np.asarray(params["final_norm"], dtype=np.float64), head)

    def copy(self) -> "ModelGraph":
        return ModelGraph.from_params(self.config, {k: v.copy() for k, v in self.params().items()})


def linear_names(cfg: ModelConfig) -> list[str]:
    return [f"block{b}.{n}" for b in range(cfg.n_blocks) for n in LINEARS] + ["head"]


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelGraph:
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    out_std = 1.0 / math.sqrt(2 * cfg.n_blocks)

    def lin(n_in, n_out, scale=1.0):
        return rng.normal(0.0, scale / math.sqrt(n_in), size=(n_in, n_out))

    blocks = [BlockSpec(q=lin(d, d), k=lin(d, d), v=lin(d, d), o=lin(d, d, out_std),
                        gate=lin(d, f), up=lin(d, f), down=lin(f, d, out_std),
                        norm1=np.ones(d), norm2=np.ones(d))
              for _ in range(cfg.n_blocks)]
    embed = rng.normal(0.0, 1.0, size=(cfg.vocab, d))
    head = None if cfg.tied else lin(d, cfg.vocab)
    return ModelGraph(cfg, embed, blocks, np.ones(d), head)


# -- quantization configuration -----------------------------------------------------

def tap_names(cfg: ModelConfig) -> list[str]:
    names = ["embed.out"]
    for b in range(cfg.n_blocks):
        names += [f"block{b}.{t}" for t in BLOCK_TAPS]
    return names + ["head.in", "head.logits"]


def tap_kind(name: str) -> str:
    return name.split(".", 1)[1] if name.startswith("block") else name


@dataclass(frozen=True)
class Tap:
    name: str
    bits: int


@dataclass
class QConfig:
    """Scheme assignment for every linear weight and every activation tap."""

    name: str
    weights: dict[str, QuantScheme]
    acts: dict[str, int]
    placements: tuple[str, ...] = DEFAULT_PLACEMENTS

    def __post_init__(self):
        bad = set(self.placements) - set(PLACEMENTS)
        if bad:
            raise ValueError(f"unknown placements {sorted(bad)}")

    def check(self, cfg: ModelConfig) -> None:
        if set(self.weights) != set(linear_names(cfg)):
            raise ValueError("QConfig weight assignments do not match the model's linear layers")
        if set(self.acts) != set(tap_names(cfg)):
            raise ValueError("QConfig tap assignments do not match the model's taps")

    def to_dict(self) -> dict:
        return {"name": self.name, "placements": list(self.placements),
                "weights": {k: v.to_dict() for k, v in self.weights.items()},
                "acts": dict(self.acts)}

    @classmethod
    def from_dict(cls, d: dict) -> "QConfig":
        return cls(d["name"], {k: QuantScheme.from_dict(v) for k, v in d["weights"].items()},
                   {k: int(v) for k, v in d["acts"].items()}, tuple(d["placements"]))


def make_qconfig(scheme: str, cfg: ModelConfig, placements=DEFAULT_PLACEMENTS,
                 down_per_channel: bool = True) -> QConfig:
    """Build one of the named schemes.

    w8a8: per-tensor W8 except per-channel down_proj; w4a8: per-channel W4;
    w4a8-sym: symmetric per-channel W4; w8a16: W8 with every tap at 16 bits;
    full-w8a8: W8 with every tap at 8 bits. All asymmetric unless noted.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    weights = {}
    for name in linear_names(cfg):
        cls = name.rsplit(".", 1)[-1]
        if scheme.startswith("w4"):
            weights[name] = QuantScheme(4, axis=1, symmetric=scheme == "w4a8-sym")
        elif cls == "down" and down_per_channel:
            weights[name] = QuantScheme(8, axis=1)
        else:
            weights[name] = QuantScheme(8)
    acts = {}
    for t in tap_names(cfg):
        if scheme == "w8a16":
            acts[t] = 16
        elif scheme == "full-w8a8":
            acts[t] = 8
        else:
            acts[t] = 16 if tap_kind(t) in WIDE_TAPS else 8
    return QConfig(scheme, weights, acts, tuple(placements))


def uniform_qconfig(cfg: ModelConfig, wbits: int, abits: int, name: str | None = None,
                    placements=DEFAULT_PLACEMENTS) -> QConfig:
    weights = {n: QuantScheme(wbits) for n in linear_names(cfg)}
    acts = {t: abits for t in tap_names(cfg)}
    return QConfig(name or f"w{wbits}a{abits}", weights, acts, tuple(placements))


def tap_list(model: ModelGraph, qconfig: QConfig | None = None) -> list[Tap]:
    """Ordered tap descriptors with their activation bitwidths (16 when unassigned)."""
    names = tap_names(model.config)
    if qconfig is None:
        return [Tap(n, 16) for n in names]
    qconfig.check(model.config)
    return [Tap(n, qconfig.acts[n]) for n in names]


@dataclass
class QuantParams:
    """Learned quantization state: activation ranges per tap and clip logits per linear."""

    acts: dict[str, RangeParams] = field(default_factory=dict)
    clips: dict[str, ClipParams] = field(default_factory=dict)

    def copy(self) -> "QuantParams":
        return QuantParams({k: RangeParams(v.alpha.copy(), v.beta.copy(), v.bits) for k, v in self.acts.items()},
                           {k: ClipParams(v.theta_min.copy(), v.theta_max.copy()) for k, v in self.clips.items()})

    def rounded(self) -> "QuantParams":
        """Export form with integral activation offsets."""
        return QuantParams({k: v.rounded() for k, v in self.acts.items()}, self.copy().clips)


def default_clips(model: ModelGraph, qconfig: QConfig) -> dict[str, ClipParams]:
    params = model.params()
    return {n: clip_params_for(params[n].shape, s) for n, s in qconfig.weights.items()}


# -- execution contexts ------------------------------------------------------------------

class FloatCtx:
    """Pass-through: no quantization."""

    def tap(self, name: str, x: Tensor) -> Tensor:
        return x

    def weight(self, name: str, w: Tensor) -> Tensor:
        return w


@dataclass
class ActStats:
    """Running per-tap statistics; merge is associative and commutative."""

    min: float = math.inf
    max: float = -math.inf
    absmax: float = 0.0
    count: int = 0
    chan_absmax: np.ndarray | None = None

    def update(self, x: np.ndarray, channels: bool = False) -> None:
        self.min = min(self.min, float(x.min()))
        self.max = max(self.max, float(x.max()))
        self.absmax = max(self.absmax, float(np.abs(x).max()))
        self.count += x.size
        if channels:
            cm = np.abs(x).reshape(-1, x.shape[-1]).max(axis=0)
            self.chan_absmax = cm if self.chan_absmax is None else np.maximum(self.chan_absmax, cm)

    def merge(self, other: "ActStats") -> "ActStats":
        if self.chan_absmax is None or other.chan_absmax is None:
            chan = self.chan_absmax if other.chan_absmax is None else other.chan_absmax
        else:
            chan = np.maximum(self.chan_absmax, other.chan_absmax)
        return ActStats(min(self.min, other.min), max(self.max, other.max),
                        max(self.absmax, other.absmax), self.count + other.count,
                        None if chan is None else chan.copy())


# taps whose per-channel absmax feeds scale initialization
CHANNEL_TAPS = frozenset({"attn.qkv_in", "mlp.in", "mlp.down_in", "attn.ctx"})


class StatsCtx(FloatCtx):
    def __init__(self):
        self.stats: dict[str, ActStats] = {}

    def tap(self, name: str, x: Tensor) -> Tensor:
        self.stats.setdefault(name, ActStats()).update(x.data, tap_kind(name) in CHANNEL_TAPS)
        return x


class FakeQuantCtx:
    """Fake-quantizes every tap and weight.

    ``act_alpha``/``act_beta`` and ``clip_min``/``clip_max`` may hold
    trainable tensors. With ``round_beta`` the offsets are rounded to integers
    (the export form the integer engine executes).
    """

    def __init__(self, qconfig: QConfig, act_alpha: Mapping[str, Tensor], act_beta: Mapping[str, Tensor],
                 clip_min: Mapping[str, Tensor], clip_max: Mapping[str, Tensor], round_beta: bool = False):
        self.qconfig = qconfig
        self.act_alpha, self.act_beta = act_alpha, act_beta
        self.clip_min, self.clip_max = clip_min, clip_max
        self.round_beta = round_beta

    @classmethod
    def from_params(cls, qconfig: QConfig, qparams: QuantParams, round_beta: bool = True) -> "FakeQuantCtx":
        missing = set(qconfig.acts) - set(qparams.acts)
        if missing:
            raise KeyError(f"missing activation ranges for taps: {sorted(missing)[:5]}")
        alpha = {k: nm.as_tensor(v.alpha) for k, v in qparams.acts.items()}
        beta = {k: nm.as_tensor(v.beta) for k, v in qparams.acts.items()}
        cmin = {k: nm.as_tensor(v.theta_min) for k, v in qparams.clips.items()}
        cmax = {k: nm.as_tensor(v.theta_max) for k, v in qparams.clips.items()}
        return cls(qconfig, alpha, beta, cmin, cmax, round_beta)

    def tap(self, name: str, x: Tensor) -> Tensor:
        if name not in self.act_alpha:
            raise KeyError(f"missing activation range for tap {name!r}")
        beta = self.act_beta[name]
        if self.round_beta:
            beta = nm.as_tensor(np.round(beta.data))
        return fake_quant(x, self.act_alpha[name], beta, self.qconfig.acts[name])

    def weight(self, name: str, w: Tensor) -> Tensor:
        scheme = self.qconfig.weights[name]
        clipped, alpha, beta = clip_weights(w, self.clip_min[name], self.clip_max[name], scheme)
        if self.round_beta:
            beta = nm.as_tensor(np.round(beta.data))
            alpha = nm.as_tensor(alpha.data)
        return fake_quant(clipped, alpha, beta, scheme.bits)


# -- forward -------------------------------------------------------------------------------

@lru_cache(maxsize=32)
def rope_tables(seq_len: int, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv = base ** (-np.arange(half) / half)
    ang = np.arange(seq_len)[:, None] * inv[None, :]
    ang = np.concatenate([ang, ang], axis=1)
    return np.cos(ang), np.sin(ang)


@lru_cache(maxsize=32)
def causal_mask(seq_len: int) -> np.ndarray:
    return np.tril(np.ones((seq_len, seq_len), dtype=bool))


def weight_tensors(model: ModelGraph) -> dict[str, Tensor]:
    return {k: nm.as_tensor(v) for k, v in model.params().items()}


def check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ValueError("tokens must be a non-empty [T] or [B, T] array")
    if tokens.shape[1] > cfg.max_seq_len:
        raise ValueError(f"sequence length {tokens.shape[1]} exceeds max {cfg.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ValueError("token id out of range")
    return tokens.astype(np.int64)


def embed(cfg: ModelConfig, w: Mapping[str, Tensor], tokens: np.ndarray, ctx) -> Tensor:
    return ctx.tap("embed.out", nm.take_rows(w["embed"], tokens))


def block_forward(cfg: ModelConfig, w: Mapping[str, Tensor], b: int, h: Tensor, ctx) -> Tensor:
    p = f"block{b}."
    B, T, d = h.shape
    H, hd = cfg.n_heads, cfg.head_dim
    cos, sin = rope_tables(T, hd, cfg.rope_base)

    def heads(x):
        return nm.transpose(nm.reshape(x, (B, T, H, hd)), (0, 2, 1, 3))

    def lin(x, name):
        return nm.matmul(x, ctx.weight(p + name, w[p + name]))

    a = ctx.tap(p + "attn.qkv_in", nm.rmsnorm(h, w[p + "norm1"], cfg.eps))
    q = ctx.tap(p + "attn.q_out", lin(a, "q"))
    k = ctx.tap(p + "attn.k_out", lin(a, "k"))
    v = ctx.tap(p + "attn.v_out", lin(a, "v"))
    q = ctx.tap(p + "attn.q_rot", nm.rope(heads(q), cos, sin))
    k = ctx.tap(p + "attn.k_rot", nm.rope(heads(k), cos, sin))
    s = ctx.tap(p + "attn.scores", nm.mul(nm.matmul(q, nm.transpose(k)), 1.0 / math.sqrt(hd)))
    probs = ctx.tap(p + "attn.probs", nm.softmax(s, -1, causal_mask(T)))
    c = nm.matmul(probs, heads(v))
    c = ctx.tap(p + "attn.ctx", nm.reshape(nm.transpose(c, (0, 2, 1, 3)), (B, T, d)))
    o = ctx.tap(p + "attn.o_out", lin(c, "o"))
    h = ctx.tap(p + "attn.resid", nm.add(h, o))

    m = ctx.tap(p + "mlp.in", nm.rmsnorm(h, w[p + "norm2"], cfg.eps))
    g = ctx.tap(p + "mlp.gate_out", lin(m, "gate"))
    act = nm.silu if cfg.nonlinearity == "silu" else nm.gelu
    g = ctx.tap(p + "mlp.act_out", act(g))
    u = ctx.tap(p + "mlp.up_out", lin(m, "up"))
    dn = ctx.tap(p + "mlp.down_in", nm.mul(g, u))
    y = ctx.tap(p + "mlp.down_out", lin(dn, "down"))
    return ctx.tap(p + "mlp.resid", nm.add(h, y))


def final_hidden(cfg: ModelConfig, w: Mapping[str, Tensor], h: Tensor, ctx) -> Tensor:
    return ctx.tap("head.in", nm.rmsnorm(h, w["final_norm"], cfg.eps))


def head(cfg: ModelConfig, w: Mapping[str, Tensor], f: Tensor, ctx) -> Tensor:
    return ctx.tap("head.logits", nm.matmul(f, ctx.weight("head", w["head"])))


def run(cfg: ModelConfig, w: Mapping[str, Tensor], tokens: np.ndarray, ctx,
        hidden_only: bool = False) -> Tensor:
    """Full forward over [B, T] token ids; returns logits or final hidden states."""
    h = embed(cfg, w, tokens, ctx)
    for b in range(cfg.n_blocks):
        h = block_forward(cfg, w, b, h, ctx)
    f = final_hidden(cfg, w, h, ctx)
    return f if hidden_only else head(cfg, w, f, ctx)


def _squeeze_like(tokens, out: np.ndarray) -> np.ndarray:
    return out[0] if np.asarray(tokens).ndim == 1 else out


def forward_float(model: ModelGraph, tokens) -> np.ndarray:
    t = check_tokens(model.config, tokens)
    return _squeeze_like(tokens, run(model.config, weight_tensors(model), t, FloatCtx()).data)


def forward_fakequant(model: ModelGraph, tokens, qconfig: QConfig, qparams: QuantParams,
                      round_beta: bool = True) -> np.ndarray:
    """Logits with every tap and weight fake-quantized.

    ``model`` is the (already equalized) float model. ``round_beta`` selects
    the export form with integral zero-points, which is what the integer
    engine executes.
    """
    t = check_tokens(model.config, tokens)
    ctx = FakeQuantCtx.from_params(qconfig, qparams, round_beta)
    return _squeeze_like(tokens, run(model.config, weight_tensors(model), t, ctx).data)


def collect_model_stats(model: ModelGraph, batches) -> dict[str, ActStats]:
    ctx = StatsCtx()
    w = weight_tensors(model)
    for tokens in batches:
        run(model.config, w, check_tokens(model.config, tokens), ctx)
    return ctx.stats


# -- evaluation ------------------------------------------------------------------------------

def chunk_tokens(tokens: np.ndarray, seq_len: int) -> list[np.ndarray]:
    """Non-overlapping windows of ``seq_len``; a trailing window of >= 2 tokens is kept."""
    tokens = np.asarray(tokens)
    return [tokens[i:i + seq_len] for i in range(0, len(tokens), seq_len) if len(tokens[i:i + seq_len]) >= 2]


def nll_from_logits(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Per-position next-token NLL for logits [T, V] over tokens [T] (T - 1 values)."""
    z = logits[:-1] - logits[:-1].max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return -logp[np.arange(len(tokens) - 1), tokens[1:]]


def perplexity(model: ModelGraph, tokens, mode: str = "float", qconfig: QConfig | None = None,
               qparams: QuantParams | None = None, seq_len: int = 128, logits_fn=None) -> float:
    """exp(mean next-token NLL) over non-overlapping ``seq_len`` windows.

    The first token of each window is context only. ``mode`` is "float" or
    "fakequant"; ``logits_fn`` overrides both (used for the integer path).
    """
    tokens = np.asarray(tokens)
    if len(tokens) < 2:
        raise ValueError("perplexity needs at least 2 tokens")
    if logits_fn is None:
        if mode == "float":
            def logits_fn(x):
                return forward_float(model, x)
        elif mode == "fakequant":
            if qconfig is None or qparams is None:
                raise ValueError("fakequant perplexity needs qconfig and qparams")

            def logits_fn(x):
                return forward_fakequant(model, x, qconfig, qparams)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    chunks = chunk_tokens(tokens, seq_len)
    full = [c for c in chunks if len(c) == seq_len]
    nlls = []
    if full:
        batch = np.stack(full)
        logits = logits_fn(batch)
        nlls += [nll_from_logits(logits[i], batch[i]) for i in range(len(full))]
    for c in chunks[len(full):]:
        nlls.append(nll_from_logits(logits_fn(c), c))
    return float(np.exp(np.concatenate(nlls).mean()))


__all__ = [
    "ActStats", "BlockSpec", "FakeQuantCtx", "FloatCtx", "ModelConfig", "ModelGraph", "QConfig",
    "QuantParams", "StatsCtx", "Tap", "chunk_tokens", "collect_model_stats", "default_clips",
    "forward_fakequant", "forward_float", "init_model", "linear_names", "make_qconfig", "perplexity",
    "qmax", "tap_list", "tap_names", "uniform_qconfig",
]
