"""Statistics collection and learning of scales, clipping and activation ranges.

Two training modes share one parameter layout:

* blockwise: blocks in order, each minimizing the MSE between its float
  output and its fake-quant output given the float block input;
* end2end: every parameter at once against the MSE of the final hidden
  states (the lm-head input) of the float and fake-quant models.

Trainable parameters (names in the optimizer state):

    scale:{block}.{placement}   log S
    clipmin:{layer}, clipmax:{layer}   clipping logits
    alpha:{tap}                 log alpha (only with ARL)
    beta:{tap}                  beta / qmax (only with ARL)

Learning alpha in log space and beta in units of the code range keeps one
learning rate meaningful for 8- and 16-bit taps alike.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .corpus import sample_windows, split
from .equalize import PlacementPlan, ScaleVector, fuse, fuse_weights, init_scales
from .model import (
    ActStats, FakeQuantCtx, FloatCtx, ModelGraph, QConfig, QuantParams, block_forward, check_tokens,
    collect_model_stats, default_clips, linear_names, perplexity, run, tap_names, weight_tensors,
)
from .numeric import NumericalError
from .optim import Adam, clip_global_norm, cosine_lr
from .quant import ClipParams, RangeParams, qmax, range_from_minmax

log = logging.getLogger(__name__)

ABLATION_GRID = ((128, 20), (128, 60), (128, 120), (256, 60), (1024, 60))
EVAL_WINDOW_SEED = 7919


@dataclass
class CalibConfig:
    num_samples: int = 128
    epochs: int = 20
    seq_len: int = 16
    batch_size: int = 32
    lr_scale: float = 5e-3
    lr_range: float = 1e-3
    mode: str = "end2end"
    arl: bool = True
    learn_scales: bool = True
    learn_clip: bool = True
    alpha_hyper: float = 0.5
    grad_clip: float | None = 1.0
    eval_samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in ("blockwise", "end2end"):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        if self.batch_size < 1 or self.seq_len < 2:
            raise ValueError("batch_size must be >= 1 and seq_len >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown calibration fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class Calibration:
    """Learned quantization state for one model and QConfig."""

    scales: dict[str, np.ndarray]
    qparams: QuantParams
    placements: tuple[str, ...]
    config: CalibConfig
    curves: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    final_loss: float = math.nan

    def scale_vectors(self) -> dict[str, ScaleVector]:
        return {k: ScaleVector(v, k) for k, v in self.scales.items()}

    def fused_model(self, model: ModelGraph) -> ModelGraph:
        plan = PlacementPlan(self.placements, model.config.n_blocks)
        return fuse(model, plan, self.scale_vectors())

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "placements": list(self.placements),
            "scales": {k: v.tolist() for k, v in self.scales.items()},
            "acts": {k: v.to_dict() for k, v in self.qparams.acts.items()},
            "clips": {k: {"theta_min": v.theta_min.tolist(), "theta_max": v.theta_max.tolist()}
                      for k, v in self.qparams.clips.items()},
            "curves": self.curves,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        acts = {k: RangeParams.from_dict(v) for k, v in d["acts"].items()}
        clips = {k: ClipParams(np.asarray(v["theta_min"], float), np.asarray(v["theta_max"], float))
                 for k, v in d["clips"].items()}
        return cls({k: np.asarray(v, float) for k, v in d["scales"].items()}, QuantParams(acts, clips),
                   tuple(d["placements"]), CalibConfig.from_dict(d["config"]), d.get("curves", {}),
                   float(d.get("final_loss", math.nan)))


# -- data and statistics -------------------------------------------------------------

def calibration_windows(tokens: np.ndarray, cfg: CalibConfig) -> tuple[np.ndarray, np.ndarray]:
    """(training windows, fixed evaluation windows), both drawn from the train split.

    Evaluation windows do not depend on the seed, so losses are comparable
    across configurations.
    """
    train, _ = split(tokens)
    calib = sample_windows(train, cfg.num_samples, cfg.seq_len, np.random.default_rng(cfg.seed))
    evalw = sample_windows(train, cfg.eval_samples, cfg.seq_len, np.random.default_rng(EVAL_WINDOW_SEED))
    return calib, evalw


def _batches(windows: np.ndarray, size: int):
    for i in range(0, len(windows), size):
        yield windows[i:i + size]


def collect_stats(model: ModelGraph, calib: np.ndarray, batch_size: int = 64) -> dict[str, ActStats]:
    """Exact running min/max/absmax per tap over every position of ``calib``."""
    if len(calib) == 0:
        raise ValueError("need at least one calibration sample")
    return collect_model_stats(model, _batches(np.atleast_2d(calib), batch_size))


def merge_stats(a: dict[str, ActStats], b: dict[str, ActStats]) -> dict[str, ActStats]:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k].merge(v) if k in out else v
    return out


def init_ranges(stats: dict[str, ActStats], qconfig: QConfig) -> dict[str, RangeParams]:
    return {t: range_from_minmax(stats[t].min, stats[t].max, bits) for t, bits in qconfig.acts.items()}


def initialize(model: ModelGraph, calib: np.ndarray, qconfig: QConfig,
               alpha_hyper: float = 0.5) -> tuple[dict[str, np.ndarray], QuantParams]:
    """SmoothQuant-style scales, then min/max ranges on the equalized model."""
    qconfig.check(model.config)
    plan = PlacementPlan(qconfig.placements, model.config.n_blocks)
    stats = collect_stats(model, calib)
    scales = init_scales(model, stats, plan, alpha_hyper)
    fused = fuse(model, plan, scales)
    ranges = init_ranges(collect_stats(fused, calib), qconfig)
    return ({k: v.log_values for k, v in scales.items()},
            QuantParams(ranges, default_clips(model, qconfig)))


def reestimate_ranges(model: ModelGraph, calibration: Calibration, calib: np.ndarray,
                      qconfig: QConfig) -> dict[str, RangeParams]:
    """One-shot min/max ranges of the current equalized model (diagnostic only)."""
    return init_ranges(collect_stats(calibration.fused_model(model), calib), qconfig)


# -- training --------------------------------------------------------------------------

class _CheckedCtx:
    """Wraps a context and records the first tap producing non-finite values."""

    def __init__(self, inner):
        self.inner = inner
        self.first_bad: str | None = None

    def tap(self, name, x):
        if self.first_bad is None and not np.all(np.isfinite(x.data)):
            self.first_bad = f"{name} (input)"
        y = self.inner.tap(name, x)
        if self.first_bad is None and not np.all(np.isfinite(y.data)):
            self.first_bad = name
        return y

    def weight(self, name, w):
        y = self.inner.weight(name, w)
        if self.first_bad is None and not np.all(np.isfinite(y.data)):
            self.first_bad = f"weight {name}"
        return y


class _Trainer:
    def __init__(self, model: ModelGraph, qconfig: QConfig, cfg: CalibConfig,
                 scales: dict[str, np.ndarray], qparams: QuantParams):
        self.model, self.qconfig, self.cfg = model, qconfig, cfg
        self.mcfg = model.config
        self.base = weight_tensors(model)
        self.state: dict[str, np.ndarray] = {}
        for k, v in scales.items():
            self.state[f"scale:{k}"] = v.copy()
        for k, v in qparams.clips.items():
            self.state[f"clipmin:{k}"] = v.theta_min.copy()
            self.state[f"clipmax:{k}"] = v.theta_max.copy()
        for k, v in qparams.acts.items():
            self.state[f"alpha:{k}"] = np.log(v.alpha)
            self.state[f"beta:{k}"] = v.beta / qmax(v.bits)
        self.init_acts = qparams.acts
        self.trained_taps: set[str] = set()

    def trainable(self, blocks: set[int] | None) -> list[str]:
        """Parameter names for the given blocks (None = whole model, end-to-end)."""
        def in_scope(name: str) -> bool:
            if blocks is None:
                return True
            return any(name.startswith(f"block{b}.") for b in blocks)

        names = []
        if self.cfg.learn_scales:
            names += [f"scale:{k}" for k in self._keys("scale:") if in_scope(k)]
        if self.cfg.learn_clip:
            names += [f"clip{m}:{k}" for k in self._keys("clipmin:") if k != "head" and in_scope(k)
                      for m in ("min", "max")]
        if self.cfg.arl:
            taps = [t for t in tap_names(self.mcfg) if t != "head.logits" and in_scope(t)]
            if blocks is not None:
                taps = [t for t in taps if t.startswith("block")]
                if 0 in blocks:
                    taps.append("embed.out")
            names += [f"{p}:{t}" for t in taps for p in ("alpha", "beta")]
        return names

    def _keys(self, prefix: str) -> list[str]:
        return [k[len(prefix):] for k in self.state if k.startswith(prefix)]

    def build(self, trainable: set[str]):
        def get(name):
            v = self.state[name]
            return nm.parameter(v, name) if name in trainable else nm.as_tensor(v)

        scales = {k: nm.exp(get(f"scale:{k}")) for k in self._keys("scale:")}
        weights = fuse_weights(self.base, scales)
        alpha, beta = {}, {}
        for t, rp in self.init_acts.items():
            if t in self.trained_taps:
                alpha[t] = nm.exp(get(f"alpha:{t}"))
                beta[t] = nm.mul(get(f"beta:{t}"), float(qmax(rp.bits)))
            else:
                alpha[t], beta[t] = nm.as_tensor(rp.alpha), nm.as_tensor(rp.beta)
        cmin = {k: get(f"clipmin:{k}") for k in self._keys("clipmin:")}
        cmax = {k: get(f"clipmax:{k}") for k in self._keys("clipmax:")}
        return weights, FakeQuantCtx(self.qconfig, alpha, beta, cmin, cmax, round_beta=False)

    def fit(self, names: list[str], loss_fn, train_data: tuple, eval_data: tuple, tag: str) -> dict[str, list[float]]:
        """Adam over ``names`` with cosine decay; keeps the best-so-far checkpoint on eval loss."""
        cfg = self.cfg
        curves = {"train": [], "eval": [], "best": []}
        trainable = set(names)
        n = len(train_data[0])
        steps_per_epoch = math.ceil(n / cfg.batch_size)
        total = steps_per_epoch * cfg.epochs

        def evaluate():
            weights, ctx = self.build(set())
            return float(loss_fn(weights, ctx, *eval_data).data)

        best = evaluate()
        curves["eval"].append(best)
        curves["best"].append(best)
        if cfg.epochs == 0 or not names:
            return curves
        self.trained_taps |= {n.split(":", 1)[1] for n in names if n.startswith("alpha:")}
        best_state = {k: self.state[k].copy() for k in names}
        params = {k: self.state[k] for k in names}
        opt = Adam(params, lambda k: cfg.lr_range if k.startswith(("alpha:", "beta:")) else cfg.lr_scale)
        rng = np.random.default_rng(cfg.seed + 1)
        step = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for i in range(0, n, cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                weights, ctx = self.build(trainable)
                loss = loss_fn(weights, ctx, *(a[idx] for a in train_data))
                value = float(loss.data)
                if not math.isfinite(value):
                    self._diagnose(loss_fn, trainable, [a[idx] for a in train_data], tag)
                grads = clip_global_norm(nm.backward(loss), cfg.grad_clip)
                opt.step(grads, cosine_lr(1.0, step, total) if total > 1 else 1.0)
                self.state.update(opt.params)
                epoch_losses.append(value)
                step += 1
            current = evaluate()
            curves["train"].append(float(np.mean(epoch_losses)))
            curves["eval"].append(current)
            if current < best:
                best = current
                best_state = {k: self.state[k].copy() for k in names}
            curves["best"].append(best)
            log.debug("%s epoch %d train %.6g eval %.6g", tag, epoch, curves["train"][-1], current)
        self.state.update(best_state)
        return curves

    def _diagnose(self, loss_fn, trainable, data, tag):
        weights, ctx = self.build(trainable)
        checked = _CheckedCtx(ctx)
        loss_fn(weights, checked, *data)
        where = checked.first_bad or "loss reduction"
        raise NumericalError(f"non-finite calibration loss in {tag}; first non-finite value at {where}")

    def result(self, scales_init: dict[str, np.ndarray], placements, curves) -> Calibration:
        scales = {k: self.state[f"scale:{k}"].copy() for k in scales_init}
        clips = {k: ClipParams(self.state[f"clipmin:{k}"].copy(), self.state[f"clipmax:{k}"].copy())
                 for k in self._keys("clipmin:")}
        acts = {}
        for t, rp in self.init_acts.items():
            if t in self.trained_taps:
                acts[t] = RangeParams(np.exp(self.state[f"alpha:{t}"]),
                                      self.state[f"beta:{t}"] * qmax(rp.bits), rp.bits)
            else:
                acts[t] = rp
        return Calibration(scales, QuantParams(acts, clips), tuple(placements), self.cfg, curves)


def _mse(a: nm.Tensor, b) -> nm.Tensor:
    d = nm.sub(a, b)
    return nm.mean(nm.mul(d, d))


def hidden_loss(model: ModelGraph, calibration: Calibration, qconfig: QConfig, windows: np.ndarray) -> float:
    """MSE between float and fake-quant (trained form) final hidden states."""
    cfg = model.config
    target = run(cfg, weight_tensors(model), check_tokens(cfg, windows), FloatCtx(), hidden_only=True).data
    fused = calibration.fused_model(model)
    ctx = FakeQuantCtx.from_params(qconfig, calibration.qparams, round_beta=False)
    out = run(cfg, weight_tensors(fused), check_tokens(cfg, windows), ctx, hidden_only=True)
    return float(_mse(out, target).data)


def train_end2end(model: ModelGraph, calib: np.ndarray, qconfig: QConfig, cfg: CalibConfig,
                  init: tuple[dict[str, np.ndarray], QuantParams], eval_windows: np.ndarray) -> Calibration:
    """Joint optimization of every scale, clip and range parameter against final hidden states."""
    mcfg = model.config
    w0 = weight_tensors(model)

    def targets(windows):
        return run(mcfg, w0, check_tokens(mcfg, windows), FloatCtx(), hidden_only=True).data

    def loss_fn(weights, ctx, tokens, target):
        return _mse(run(mcfg, weights, tokens, ctx, hidden_only=True), target)

    trainer = _Trainer(model, qconfig, cfg, *init)
    names = trainer.trainable(None)
    curves = trainer.fit(names, loss_fn, (calib, targets(calib)), (eval_windows, targets(eval_windows)), "end2end")
    return trainer.result(init[0], qconfig.placements, {"end2end": curves})


def train_blockwise(model: ModelGraph, calib: np.ndarray, qconfig: QConfig, cfg: CalibConfig,
                    init: tuple[dict[str, np.ndarray], QuantParams], eval_windows: np.ndarray) -> Calibration:
    """Blocks in order; each block sees float inputs and matches its float output."""
    mcfg = model.config
    w0 = weight_tensors(model)

    def block_io(windows):
        ctx = FloatCtx()
        h = run_embed(windows)
        ins, outs = [], []
        for b in range(mcfg.n_blocks):
            ins.append(h.data)
            h = block_forward(mcfg, w0, b, h, ctx)
            outs.append(h.data)
        return ins, outs

    def run_embed(windows):
        return nm.take_rows(w0["embed"], check_tokens(mcfg, windows))

    train_in, train_out = block_io(calib)
    eval_in, eval_out = block_io(eval_windows)
    trainer = _Trainer(model, qconfig, cfg, *init)
    curves = {}
    for b in range(mcfg.n_blocks):
        prev_tap = "embed.out" if b == 0 else f"block{b - 1}.mlp.resid"

        def loss_fn(weights, ctx, x, target, b=b, prev_tap=prev_tap):
            h = ctx.tap(prev_tap, nm.as_tensor(x))
            return _mse(block_forward(mcfg, weights, b, h, ctx), target)

        names = trainer.trainable({b})
        curves[f"block{b}"] = trainer.fit(names, loss_fn, (train_in[b], train_out[b]),
                                          (eval_in[b], eval_out[b]), f"block{b}")
    return trainer.result(init[0], qconfig.placements, curves)


def calibrate(model: ModelGraph, tokens: np.ndarray, qconfig: QConfig, cfg: CalibConfig) -> Calibration:
    """Full pipeline: sample windows, initialize, train in the configured mode."""
    calib, evalw = calibration_windows(tokens, cfg)
    init = initialize(model, calib, qconfig, cfg.alpha_hyper)
    trainer = train_end2end if cfg.mode == "end2end" else train_blockwise
    result = trainer(model, calib, qconfig, cfg, init, evalw)
    result.final_loss = hidden_loss(model, result, qconfig, evalw)
    return result


def quantized_perplexity(model: ModelGraph, calibration: Calibration, qconfig: QConfig,
                         tokens: np.ndarray, seq_len: int = 128) -> float:
    """Fake-quant perplexity (export form) on the held-out split of ``tokens``."""
    _, held = split(tokens)
    return perplexity(calibration.fused_model(model), held, "fakequant", qconfig,
                      calibration.qparams.rounded(), seq_len=seq_len)


# -- ablation ------------------------------------------------------------------------------

def ablate(model: ModelGraph, tokens: np.ndarray, qconfig: QConfig, base: CalibConfig,
           grid=ABLATION_GRID, modes=("blockwise", "end2end")) -> list[dict]:
    """Perplexity and final loss per (samples, epochs, mode), sorted by (samples, epochs)."""
    if not grid:
        raise ValueError("ablation grid is empty")
    rows = []
    for samples, epochs in sorted(grid):
        row = {"samples": samples, "epochs": epochs}
        for mode in modes:
            cfg = CalibConfig(**{**base.to_dict(), "num_samples": samples, "epochs": epochs, "mode": mode})
            result = calibrate(model, tokens, qconfig, cfg)
            row[mode] = quantized_perplexity(model, result, qconfig, tokens)
            row[f"{mode}_loss"] = result.final_loss
        rows.append(row)
    return rows


def format_table(rows: list[dict], modes=("blockwise", "end2end")) -> str:
    """Aligned text rendering in the layout of the block-wise vs end-to-end grid."""
    titles = {"blockwise": "Block-wise", "end2end": "End-to-end"}
    header = ["#Samples", "#Epochs"] + [titles.get(m, m) for m in modes]
    body = [[str(r["samples"]), str(r["epochs"])] + [f"{r[m]:.3f}" for m in modes] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def clip_defaults(model: ModelGraph, qconfig: QConfig) -> dict[str, ClipParams]:
    return default_clips(model, qconfig)


__all__ = [
    "ActStats", "CalibConfig", "Calibration", "NumericalError", "ABLATION_GRID", "ablate", "calibrate",
    "calibration_windows", "collect_stats", "format_table", "hidden_loss", "initialize", "linear_names",
    "merge_stats", "quantized_perplexity", "train_blockwise", "train_end2end",
]
