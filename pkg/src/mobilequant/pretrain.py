"""Desk-scale float pretraining of the toy model on a byte corpus."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .corpus import sample_windows, split
from .model import FloatCtx, ModelConfig, ModelGraph, init_model, perplexity, run
from .optim import Adam, clip_global_norm, cosine_lr

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    steps: int = 600
    batch_size: int = 16
    seq_len: int = 64
    lr: float = 3e-3
    weight_decay: float = 0.0
    seed: int = 0
    eval_seq_len: int = 128


@dataclass
class PretrainResult:
    model: ModelGraph
    losses: list[float]
    train_perplexity: float
    eval_perplexity: float
    init_eval_perplexity: float


def pretrain(tokens: np.ndarray, model_cfg: ModelConfig = ModelConfig(),
             cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    train, held = split(tokens)
    model = init_model(model_cfg, cfg.seed)
    init_ppl = perplexity(model, held, seq_len=cfg.eval_seq_len)
    params = {k: v.copy() for k, v in model.params().items()}
    if model_cfg.tied:
        del params["head"]
    opt = Adam(params, cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    losses = []
    for step in range(cfg.steps):
        batch = sample_windows(train, cfg.batch_size, cfg.seq_len + 1, rng)
        w = {k: nm.parameter(v, k) for k, v in opt.params.items()}
        if model_cfg.tied:
            w["head"] = nm.transpose(w["embed"])
        logits = run(model_cfg, w, batch[:, :-1], FloatCtx())
        loss = nm.cross_entropy(logits, batch[:, 1:])
        grads = clip_global_norm(nm.backward(loss), 1.0)
        opt.step(grads, cosine_lr(1.0, step, cfg.steps))
        losses.append(float(loss.data))
        if step % 250 == 0:
            log.info("pretrain step %d loss %.4f", step, losses[-1])
    trained = ModelGraph.from_params(model_cfg, opt.params)
    train_ppl = perplexity(trained, train[:len(held)], seq_len=cfg.eval_seq_len)
    eval_ppl = perplexity(trained, held, seq_len=cfg.eval_seq_len)
    return PretrainResult(trained, losses, train_ppl, eval_ppl, init_ppl)
