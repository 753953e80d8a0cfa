"""Integer execution of a calibrated model.

Linear layers, the two attention products, the gated MLP product and the
residual adds run on integer codes with int64 accumulators that are checked
against the signed 32-bit range, followed by fixed-point requantization
(Q31 multiplier, round-half-to-even right shift). Normalization, rotary
embedding, softmax and the MLP nonlinearity are islands: their inputs are
dequantized, computed in float exactly as the fake-quant simulation does, and
requantized at the boundary tap.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileformat
from . import numeric as nm
from .model import (
    ModelConfig, ModelGraph, QConfig, QuantParams, check_tokens, chunk_tokens, nll_from_logits, rope_tables,
)
from .numeric import NumericalError
from .quant import QuantScheme, clip_weights, qmax

INT32_LIMIT = 1 << 31
_RESID_HEADROOM = 45

# (linear, input tap, output tap) within a block
_BLOCK_LINEARS = (
    ("q", "attn.qkv_in", "attn.q_out"),
    ("k", "attn.qkv_in", "attn.k_out"),
    ("v", "attn.qkv_in", "attn.v_out"),
    ("o", "attn.ctx", "attn.o_out"),
    ("gate", "mlp.in", "mlp.gate_out"),
    ("up", "mlp.in", "mlp.up_out"),
    ("down", "mlp.down_in", "mlp.down_out"),
)


class AccumulatorOverflow(NumericalError):
    """An accumulator left the signed 32-bit range."""


class RequantRangeError(ValueError):
    """A scale ratio cannot be encoded as a Q31 multiplier and shift."""


# -- fixed-point arithmetic ------------------------------------------------------------

def shift_round_half_even(v: np.ndarray, n) -> np.ndarray:
    """round(v / 2**n) with ties to even, exact on int64 (n >= 1)."""
    v = np.asarray(v, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    q = v >> n
    rem = v - (q << n)
    half = np.int64(1) << (n - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up


@dataclass(frozen=True)
class FixedPointRequant:
    """Real scale r = multiplier * 2**(-31 - shift), multiplier in [2**30, 2**31).

    ``shift`` may be negative for r >= 1; the total right shift 31 + shift
    must lie in [1, 62]. Arrays hold one descriptor per output channel.
    """

    multiplier: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.multiplier, dtype=np.int64)
        s = np.asarray(self.shift, dtype=np.int64)
        if np.any(m < (1 << 30)) or np.any(m >= INT32_LIMIT):
            raise RequantRangeError("multiplier outside [2^30, 2^31)")
        if np.any(31 + s < 1) or np.any(31 + s > 62):
            raise RequantRangeError("total shift outside [1, 62]")
        object.__setattr__(self, "multiplier", m)
        object.__setattr__(self, "shift", s)

    @classmethod
    def from_real(cls, r) -> "FixedPointRequant":
        r = np.asarray(r, dtype=np.float64)
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise RequantRangeError(f"scale ratio must be positive and finite, got {r}")
        mant, exp = np.frexp(r)
        mult = np.round(np.ldexp(mant, 31)).astype(np.int64)
        carry = mult == INT32_LIMIT
        mult = np.where(carry, 1 << 30, mult)
        exp = exp + carry
        shift = -exp.astype(np.int64)
        if np.any(31 + shift < 1) or np.any(31 + shift > 62):
            raise RequantRangeError(f"scale ratio {r} outside the representable range [2^-31, 2^30]")
        return cls(mult, shift)

    @property
    def real(self) -> np.ndarray:
        return np.ldexp(self.multiplier.astype(np.float64), (-31 - self.shift).astype(np.int32))

    def apply(self, acc: np.ndarray) -> np.ndarray:
        """round_half_even(acc * r) for |acc| < 2**31."""
        return shift_round_half_even(np.asarray(acc, dtype=np.int64) * self.multiplier, 31 + self.shift)

    def to_dict(self) -> dict:
        return {"multiplier": self.multiplier.tolist(), "shift": self.shift.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FixedPointRequant":
        return cls(np.asarray(d["multiplier"], np.int64), np.asarray(d["shift"], np.int64))


@dataclass(frozen=True)
class FixedPointAdd:
    """out = round((ra * a + rb * b)) with ra, rb encoded at a shared exponent."""

    ma: int
    mb: int
    k: int

    @classmethod
    def from_ratios(cls, ra: float, rb: float) -> "FixedPointAdd":
        top = max(ra, rb)
        if not (math.isfinite(top) and min(ra, rb) > 0):
            raise RequantRangeError("residual scale ratios must be positive and finite")
        k = int(np.clip(_RESID_HEADROOM - math.floor(math.log2(top)), 1, 62))
        return cls(int(round(math.ldexp(ra, k))), int(round(math.ldexp(rb, k))), k)

    def apply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return shift_round_half_even(a * np.int64(self.ma) + b * np.int64(self.mb), self.k)

    def to_dict(self) -> dict:
        return {"ma": self.ma, "mb": self.mb, "k": self.k}


# -- instrumentation -------------------------------------------------------------------

class FloatOpCounter:
    """Counts float elements touched per region; integer regions must stay at zero."""

    INTEGER_REGIONS = ("linear", "attention", "mlp.product", "residual", "embed")

    def __init__(self):
        self.counts: dict[str, int] = defaultdict(int)

    def island(self, region: str, x: np.ndarray) -> None:
        self.counts[region] += int(np.size(x))

    def integer(self, region: str, *arrays: np.ndarray) -> None:
        """Record operands of an integer region; float operands are counted (and should never occur)."""
        self.counts.setdefault(region, 0)
        for a in arrays:
            if not np.issubdtype(np.asarray(a).dtype, np.integer):
                self.counts[region] += int(np.size(a))

    def linear_float_ops(self) -> int:
        return sum(self.counts.get(r, 0) for r in self.INTEGER_REGIONS)

    def report(self) -> dict[str, int]:
        return dict(sorted(self.counts.items()))


# -- compiled model ----------------------------------------------------------------------

@dataclass(frozen=True)
class TapQ:
    """Activation quantizer in export form (integral zero-point)."""

    alpha: float
    zero_point: int
    bits: int

    @property
    def qmax(self) -> int:
        return qmax(self.bits)

    def quantize(self, x: np.ndarray) -> np.ndarray:
        # same operation order as the fake-quant node, so island outputs match bit for bit
        c = np.round(np.asarray(x) / self.alpha) - float(-self.zero_point)
        return np.clip(c, 0, self.qmax).astype(np.int64)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return (np.asarray(codes).astype(np.float64) + float(-self.zero_point)) * self.alpha

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "zero_point": self.zero_point, "bits": self.bits}


@dataclass
class QLinear:
    """Integer weights [d_in, d_out] with per-group zero-points and scales."""

    codes: np.ndarray
    zero_point: np.ndarray
    alpha: np.ndarray
    scheme: QuantScheme
    in_tap: str
    out_tap: str
    requant: FixedPointRequant
    _centered: np.ndarray | None = field(default=None, repr=False)

    @property
    def centered(self) -> np.ndarray:
        if self._centered is None:
            self._centered = self.codes.astype(np.int64) - self.zero_point
        return self._centered

    def worst_case_accumulator(self, x_tap: TapQ) -> int:
        x_span = max(x_tap.zero_point, x_tap.qmax - x_tap.zero_point, 0)
        return int(x_span * np.abs(self.centered).sum(axis=0).max())

    def dequantized(self) -> np.ndarray:
        return self.centered * self.alpha


@dataclass
class QuantizedModel:
    config: ModelConfig
    qconfig: QConfig
    taps: dict[str, TapQ]
    linears: dict[str, QLinear]
    embed_codes: np.ndarray
    norms: dict[str, np.ndarray]
    requants: dict[str, FixedPointRequant]
    adds: dict[str, FixedPointAdd]

    @property
    def scheme(self) -> str:
        return self.qconfig.name

    def save(self, path: str | Path) -> bytes:
        return save_quantized(path, self)


def _residual_add(taps, a: str, b: str, out: str) -> FixedPointAdd:
    return FixedPointAdd.from_ratios(taps[a].alpha / taps[out].alpha, taps[b].alpha / taps[out].alpha)


def _prev_resid(b: int) -> str:
    return "embed.out" if b == 0 else f"block{b - 1}.mlp.resid"


def compile_model(model: ModelGraph, qparams: QuantParams, qconfig: QConfig) -> QuantizedModel:
    """Quantize an (already equalized) float model with learned parameters.

    Offsets are rounded to integral zero-points here; the result executes
    the same arithmetic as the export-form fake-quant simulation.
    """
    cfg = model.config
    qconfig.check(cfg)
    params = model.params()
    taps = {}
    for name, bits in qconfig.acts.items():
        rp = qparams.acts[name].rounded()
        if rp.bits != bits or rp.alpha.size != 1:
            raise ValueError(f"tap {name}: expected one {bits}-bit range, got {rp.bits}-bit with {rp.alpha.size}")
        taps[name] = TapQ(float(rp.alpha), int(-rp.beta), bits)

    linears = {}
    for b in range(cfg.n_blocks):
        for lin, tin, tout in _BLOCK_LINEARS:
            name = f"block{b}.{lin}"
            linears[name] = _compile_linear(params[name], qparams, qconfig, name, f"block{b}.{tin}",
                                            f"block{b}.{tout}", taps)
    linears["head"] = _compile_linear(params["head"], qparams, qconfig, "head", "head.in", "head.logits", taps)
    for name, ql in linears.items():
        bound = ql.worst_case_accumulator(taps[ql.in_tap])
        if bound >= INT32_LIMIT:
            raise AccumulatorOverflow(f"{name}: worst-case accumulator {bound} does not fit in 32 bits")

    requants, adds = {}, {}
    hd = cfg.head_dim
    for b in range(cfg.n_blocks):
        p = f"block{b}."
        t = {k[len(p):]: v for k, v in taps.items() if k.startswith(p)}
        worst_scores = hd * max(t["attn.q_rot"].zero_point, t["attn.q_rot"].qmax - t["attn.q_rot"].zero_point) \
            * max(t["attn.k_rot"].zero_point, t["attn.k_rot"].qmax - t["attn.k_rot"].zero_point)
        if worst_scores >= INT32_LIMIT:
            raise AccumulatorOverflow(f"{p}attn.scores: worst-case accumulator {worst_scores} exceeds 32 bits")
        requants[p + "attn.scores"] = FixedPointRequant.from_real(
            t["attn.q_rot"].alpha * t["attn.k_rot"].alpha / math.sqrt(hd) / t["attn.scores"].alpha)
        requants[p + "attn.ctx"] = FixedPointRequant.from_real(
            t["attn.probs"].alpha * t["attn.v_out"].alpha / t["attn.ctx"].alpha)
        requants[p + "mlp.down_in"] = FixedPointRequant.from_real(
            t["mlp.act_out"].alpha * t["mlp.up_out"].alpha / t["mlp.down_in"].alpha)
        adds[p + "attn.resid"] = _residual_add(taps, _prev_resid(b), p + "attn.o_out", p + "attn.resid")
        adds[p + "mlp.resid"] = _residual_add(taps, p + "attn.resid", p + "mlp.down_out", p + "mlp.resid")

    norms = {k: params[k].copy() for k in params if k.endswith(("norm1", "norm2")) or k == "final_norm"}
    embed_codes = taps["embed.out"].quantize(params["embed"])
    return QuantizedModel(cfg, qconfig, taps, linears, embed_codes, norms, requants, adds)


def _compile_linear(w: np.ndarray, qparams: QuantParams, qconfig: QConfig, name: str,
                    in_tap: str, out_tap: str, taps: dict[str, TapQ]) -> QLinear:
    scheme = qconfig.weights[name]
    clip = qparams.clips[name]
    clipped, alpha, beta = clip_weights(w, clip.theta_min, clip.theta_max, scheme)
    alpha, beta = alpha.data, np.round(beta.data)
    codes = np.clip(np.round(clipped.data / alpha) - beta, 0, scheme.qmax).astype(np.uint8)
    zero_point = (-beta).astype(np.int64)
    ratio = taps[in_tap].alpha * alpha.reshape(-1) / taps[out_tap].alpha
    return QLinear(codes, zero_point, alpha, scheme, in_tap, out_tap, FixedPointRequant.from_real(ratio))


def compile_calibrated(model: ModelGraph, calibration, qconfig: QConfig) -> QuantizedModel:
    """Fuse the learned scales into ``model`` and compile."""
    return compile_model(calibration.fused_model(model), calibration.qparams, qconfig)


# -- integer kernels -----------------------------------------------------------------------

def _check_acc(acc: np.ndarray, where: str) -> np.ndarray:
    if acc.size and int(np.abs(acc).max()) >= INT32_LIMIT:
        raise AccumulatorOverflow(f"{where}: accumulator left the 32-bit range")
    return acc


def int_linear(x_codes: np.ndarray, w_codes: np.ndarray, z_x: int, z_w, requant: FixedPointRequant,
               z_y: int, bits_y: int, bias: np.ndarray | None = None) -> np.ndarray:
    """clamp(requant(sum (x - z_x)(w - z_w) + bias) + z_y, 0, qmax) on integer codes."""
    x = np.asarray(x_codes)
    w = np.asarray(w_codes)
    if not (np.issubdtype(x.dtype, np.integer) and np.issubdtype(w.dtype, np.integer)):
        raise TypeError("int_linear takes integer codes")
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"int_linear shape mismatch: {x.shape} @ {w.shape}")
    centered = w.astype(np.int64) - np.asarray(z_w, dtype=np.int64)
    return _linear(x, int(z_x), centered, requant, int(z_y), bits_y, bias)


def _linear(x: np.ndarray, z_x: int, centered: np.ndarray, requant: FixedPointRequant, z_y: int,
            bits_y: int, bias: np.ndarray | None = None, where: str = "linear") -> np.ndarray:
    xs = x.astype(np.int64) - z_x
    acc = (xs.reshape(-1, xs.shape[-1]) @ centered).reshape(xs.shape[:-1] + (centered.shape[1],))
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.int64)
    _check_acc(acc, where)
    return np.clip(requant.apply(acc) + z_y, 0, qmax(bits_y))


@dataclass
class KVCache:
    """Per-block key (after rotation) and value codes, [B, H, T, hd] each."""

    keys: list[np.ndarray | None]
    values: list[np.ndarray | None]

    @classmethod
    def empty(cls, n_blocks: int) -> "KVCache":
        return cls([None] * n_blocks, [None] * n_blocks)

    @property
    def length(self) -> int:
        return 0 if self.keys[0] is None else self.keys[0].shape[2]


@dataclass
class IntResult:
    logits: np.ndarray
    traces: dict[str, np.ndarray]
    counter: FloatOpCounter
    cache: KVCache


class _Runner:
    def __init__(self, qm: QuantizedModel, counter: FloatOpCounter, trace: bool):
        self.qm, self.counter, self.trace = qm, counter, trace
        self.traces: dict[str, np.ndarray] = {}

    def record(self, name: str, codes: np.ndarray) -> np.ndarray:
        if self.trace:
            self.traces[name] = codes
        return codes

    def island(self, region: str, fn, in_taps, out_tap: str, *codes):
        vals = [self.qm.taps[t].dequantize(c) for t, c in zip(in_taps, codes)]
        self.counter.island(region, vals[0])
        out = fn(*vals)
        return self.record(out_tap, self.qm.taps[out_tap].quantize(out))

    def linear(self, name: str, x: np.ndarray) -> np.ndarray:
        ql = self.qm.linears[name]
        self.counter.integer("linear", x, ql.centered)
        tin, tout = self.qm.taps[ql.in_tap], self.qm.taps[ql.out_tap]
        y = _linear(x, tin.zero_point, ql.centered, ql.requant, tout.zero_point, tout.bits, where=name)
        return self.record(ql.out_tap, y)

    def matmul(self, a: np.ndarray, ta: str, b: np.ndarray, tb: str, out: str) -> np.ndarray:
        """Requantized integer product of two activation code tensors (batched)."""
        taps = self.qm.taps
        self.counter.integer("attention", a, b)
        acc = (a.astype(np.int64) - taps[ta].zero_point) @ (b.astype(np.int64) - taps[tb].zero_point)
        _check_acc(acc, out)
        y = np.clip(self.qm.requants[out].apply(acc) + taps[out].zero_point, 0, taps[out].qmax)
        return self.record(out, y)

    def add(self, a: np.ndarray, ta: str, b: np.ndarray, tb: str, out: str) -> np.ndarray:
        taps = self.qm.taps
        self.counter.integer("residual", a, b)
        s = self.qm.adds[out].apply(a.astype(np.int64) - taps[ta].zero_point, b.astype(np.int64) - taps[tb].zero_point)
        return self.record(out, np.clip(s + taps[out].zero_point, 0, taps[out].qmax))


def int_forward(qm: QuantizedModel, tokens, cache: KVCache | None = None, trace: bool = False,
                counter: FloatOpCounter | None = None) -> IntResult:
    """Run new tokens through the integer model.

    Without a cache this is a prefill over [B, T] tokens. With a cache the
    tokens continue the cached sequences (decode); the returned cache holds
    every position processed so far.
    """
    cfg = qm.config
    tokens = check_tokens(cfg, tokens)
    cache = cache or KVCache.empty(cfg.n_blocks)
    counter = counter or FloatOpCounter()
    r = _Runner(qm, counter, trace)
    B, T = tokens.shape
    p0 = cache.length
    if p0 + T > cfg.max_seq_len:
        raise ValueError(f"sequence length {p0 + T} exceeds max {cfg.max_seq_len}")
    H, hd, d = cfg.n_heads, cfg.head_dim, cfg.d_model
    cos, sin = (t[p0:] for t in rope_tables(p0 + T, hd, cfg.rope_base))
    mask = np.arange(p0 + T)[None, :] <= (p0 + np.arange(T))[:, None]
    act = nm.silu if cfg.nonlinearity == "silu" else nm.gelu

    counter.integer("embed", tokens, qm.embed_codes)
    h = r.record("embed.out", qm.embed_codes[tokens])
    new_keys, new_values = [], []
    for b in range(cfg.n_blocks):
        p = f"block{b}."
        prev = _prev_resid(b)

        def heads(x):
            return x.reshape(B, T, H, hd).transpose(0, 2, 1, 3)

        def norm(x, weight):
            return nm.rmsnorm(x, qm.norms[weight], cfg.eps).data

        a = r.island("norm", lambda x: norm(x, p + "norm1"), [prev], p + "attn.qkv_in", h)
        q = r.linear(p + "q", a)
        k = r.linear(p + "k", a)
        v = r.linear(p + "v", a)
        q = r.island("rope", lambda x: nm.rope(heads(x), cos, sin).data, [p + "attn.q_out"], p + "attn.q_rot", q)
        k = r.island("rope", lambda x: nm.rope(heads(x), cos, sin).data, [p + "attn.k_out"], p + "attn.k_rot", k)
        v = heads(v)
        if cache.keys[b] is not None:
            k = np.concatenate([cache.keys[b], k], axis=2)
            v = np.concatenate([cache.values[b], v], axis=2)
        new_keys.append(k)
        new_values.append(v)
        s = r.matmul(q, p + "attn.q_rot", k.transpose(0, 1, 3, 2), p + "attn.k_rot", p + "attn.scores")
        probs = r.island("softmax", lambda x: nm.softmax(x, -1, mask).data, [p + "attn.scores"],
                         p + "attn.probs", s)
        c = r.matmul(probs, p + "attn.probs", v, p + "attn.v_out", p + "attn.ctx")
        c = r.record(p + "attn.ctx", c.transpose(0, 2, 1, 3).reshape(B, T, d))
        o = r.linear(p + "o", c)
        h = r.add(h, prev, o, p + "attn.o_out", p + "attn.resid")

        m = r.island("norm", lambda x: norm(x, p + "norm2"), [p + "attn.resid"], p + "mlp.in", h)
        g = r.linear(p + "gate", m)
        g = r.island("act", lambda x: act(x).data, [p + "mlp.gate_out"], p + "mlp.act_out", g)
        u = r.linear(p + "up", m)
        taps = qm.taps
        counter.integer("mlp.product", g, u)
        prod = (g - taps[p + "mlp.act_out"].zero_point) * (u - taps[p + "mlp.up_out"].zero_point)
        _check_acc(prod, p + "mlp.down_in")
        dn = np.clip(qm.requants[p + "mlp.down_in"].apply(prod) + taps[p + "mlp.down_in"].zero_point,
                     0, taps[p + "mlp.down_in"].qmax)
        dn = r.record(p + "mlp.down_in", dn)
        y = r.linear(p + "down", dn)
        h = r.add(h, p + "attn.resid", y, p + "mlp.down_out", p + "mlp.resid")

    f = r.island("norm", lambda x: nm.rmsnorm(x, qm.norms["final_norm"], cfg.eps).data,
                 [f"block{cfg.n_blocks - 1}.mlp.resid"], "head.in", h)
    logit_codes = r.linear("head", f)
    logits = qm.taps["head.logits"].dequantize(logit_codes)
    counter.island("head.dequant", logits)
    return IntResult(logits, r.traces, counter, KVCache(new_keys, new_values))


def int_logits(qm: QuantizedModel, tokens) -> np.ndarray:
    out = int_forward(qm, tokens).logits
    return out[0] if np.asarray(tokens).ndim == 1 else out


def generate(qm: QuantizedModel, prompt, n_new: int) -> np.ndarray:
    """Greedy continuation of a 1-d prompt using the key/value cache."""
    prompt = np.asarray(prompt, dtype=np.int64)
    res = int_forward(qm, prompt[None, :])
    out = list(prompt)
    for _ in range(n_new):
        nxt = int(np.argmax(res.logits[0, -1]))
        out.append(nxt)
        if len(out) >= qm.config.max_seq_len:
            break
        res = int_forward(qm, np.array([[nxt]]), cache=res.cache)
    return np.asarray(out[:len(prompt) + n_new], dtype=np.int64)


def int_perplexity(qm: QuantizedModel, tokens: np.ndarray, seq_len: int = 128) -> float:
    """Perplexity of the integer path over non-overlapping windows."""
    chunks = chunk_tokens(np.asarray(tokens), seq_len)
    if not chunks:
        raise ValueError("need at least two tokens")
    nlls = []
    full = [c for c in chunks if len(c) == seq_len]
    if full:
        batch = np.stack(full)
        logits = int_forward(qm, batch).logits
        nlls += [nll_from_logits(logits[i], batch[i]) for i in range(len(full))]
    for c in chunks[len(full):]:
        nlls.append(nll_from_logits(int_logits(qm, c), c))
    return float(np.exp(np.concatenate(nlls).mean()))


# -- persistence ---------------------------------------------------------------------------

def _weight_packing(qm: QuantizedModel) -> dict[str, str]:
    return {f"w:{n}": "nibble" for n, ql in qm.linears.items() if ql.scheme.bits == 4}


def quantized_payload(qm: QuantizedModel) -> tuple[dict, dict[str, np.ndarray], dict[str, str]]:
    header = {
        "kind": "quantized",
        "scheme": qm.scheme,
        "config": qm.config.to_dict(),
        "qconfig": qm.qconfig.to_dict(),
        "taps": {k: v.to_dict() for k, v in qm.taps.items()},
        "linears": {k: {"in_tap": v.in_tap, "out_tap": v.out_tap, "requant": v.requant.to_dict()}
                    for k, v in qm.linears.items()},
        "requants": {k: v.to_dict() for k, v in qm.requants.items()},
        "adds": {k: v.to_dict() for k, v in qm.adds.items()},
    }
    embed_dtype = np.uint16 if qm.taps["embed.out"].bits > 8 else np.uint8
    tensors = {"embed_codes": qm.embed_codes.astype(embed_dtype)}
    for n, ql in qm.linears.items():
        tensors[f"w:{n}"] = ql.codes
        tensors[f"wz:{n}"] = ql.zero_point.astype(np.uint8)
        tensors[f"wa:{n}"] = np.asarray(ql.alpha, dtype=np.float64)
    for n, v in qm.norms.items():
        tensors[f"norm:{n}"] = v
    return header, tensors, _weight_packing(qm)


def save_quantized(path: str | Path, qm: QuantizedModel) -> bytes:
    return fileformat.save(path, *quantized_payload(qm))


def encode_quantized(qm: QuantizedModel) -> bytes:
    return fileformat.encode(*quantized_payload(qm))


def load_quantized(path: str | Path) -> QuantizedModel:
    header, tensors = fileformat.load(path)
    try:
        return quantized_from_payload(header, tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise fileformat.FormatError(f"{path}: inconsistent quantized model: {exc}") from exc


def quantized_from_payload(header: dict, tensors: dict[str, np.ndarray]) -> QuantizedModel:
    if header.get("kind") != "quantized":
        raise fileformat.FormatError(f"expected a quantized model, found {header.get('kind')!r}")
    cfg = ModelConfig(**header["config"])
    qconfig = QConfig.from_dict(header["qconfig"])
    taps = {k: TapQ(float(v["alpha"]), int(v["zero_point"]), int(v["bits"])) for k, v in header["taps"].items()}
    linears = {}
    for n, meta in header["linears"].items():
        scheme = qconfig.weights[n]
        codes = tensors[f"w:{n}"].astype(np.uint8)
        if codes.size and codes.max() > scheme.qmax:
            raise fileformat.FormatError(f"weight codes of {n} exceed {scheme.bits} bits")
        linears[n] = QLinear(codes, tensors[f"wz:{n}"].astype(np.int64), tensors[f"wa:{n}"], scheme,
                             meta["in_tap"], meta["out_tap"], FixedPointRequant.from_dict(meta["requant"]))
    norms = {k[len("norm:"):]: v.astype(np.float64) for k, v in tensors.items() if k.startswith("norm:")}
    requants = {k: FixedPointRequant.from_dict(v) for k, v in header["requants"].items()}
    adds = {k: FixedPointAdd(int(v["ma"]), int(v["mb"]), int(v["k"])) for k, v in header["adds"].items()}
    return QuantizedModel(cfg, qconfig, taps, linears, tensors["embed_codes"].astype(np.int64), norms,
                          requants, adds)


def dequantized_model(qm: QuantizedModel) -> ModelGraph:
    """Float model whose linear weights are the dequantized integer weights."""
    cfg = qm.config
    params = {k: v for k, v in qm.norms.items()}
    for n, ql in qm.linears.items():
        params[n] = ql.dequantized()
    params["embed"] = qm.taps["embed.out"].dequantize(qm.embed_codes)
    return ModelGraph.from_params(cfg, params)


__all__ = [
    "AccumulatorOverflow", "FixedPointAdd", "FixedPointRequant", "FloatOpCounter", "IntResult", "KVCache",
    "QLinear", "QuantizedModel", "RequantRangeError", "TapQ", "compile_calibrated", "compile_model",
    "dequantized_model", "encode_quantized", "generate", "int_forward", "int_linear", "int_logits",
    "int_perplexity", "load_quantized", "quantized_from_payload", "save_quantized", "shift_round_half_even",
]
