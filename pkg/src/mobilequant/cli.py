"""Command-line entry point: pretrain, calibrate, export, eval, ablate, cost.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(non-finite loss, accumulator overflow, unrepresentable scale), 4 I/O or
CRC failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileformat
from .calibrate import ABLATION_GRID, CalibConfig, Calibration, ablate, calibrate, format_table, quantized_perplexity
from .corpus import load_tokens, sentences, split
from .cost import cost_report, format_cost
from .intengine import (
    RequantRangeError, compile_calibrated, encode_quantized, int_logits, int_perplexity, load_quantized,
    save_quantized,
)
from .model import (
    DEFAULT_PLACEMENTS, SCHEMES, ModelConfig, forward_fakequant, forward_float, make_qconfig, perplexity,
    uniform_qconfig,
)
from .numeric import NumericalError, tune_allocator
from .pretrain import PretrainConfig, pretrain

log = logging.getLogger("mobilequant")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# documented shape of the eval report (JSON Schema)
METRICS_SCHEMA = {
    "type": "object",
    "required": ["scheme", "perplexity", "last_token_accuracy", "relative_delta"],
    "properties": {
        "scheme": {"type": ["string", "null"]},
        "perplexity": {
            "type": "object",
            "required": ["float"],
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("float", "w16a16", "fakequant", "int")},
            "additionalProperties": False,
        },
        "last_token_accuracy": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0, "maximum": 1}
                           for k in ("float", "fakequant", "int")},
            "additionalProperties": False,
        },
        "relative_delta": {"type": "object", "additionalProperties": {"type": "number"}},
        "parity": {
            "type": "object",
            "required": ["positions", "argmax_agreement", "max_logit_code_diff"],
            "properties": {
                "positions": {"type": "integer", "minimum": 1},
                "argmax_agreement": {"type": "number", "minimum": 0, "maximum": 1},
                "max_logit_code_diff": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    subcommand: str
    model: Path | None = None
    corpus: Path | None = None
    calibration: Path | None = None
    quantized: Path | None = None
    scheme: str = "w8a8"
    mode: str | None = None
    placements: tuple[str, ...] = DEFAULT_PLACEMENTS
    calib: CalibConfig = field(default_factory=CalibConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    model_config: ModelConfig = field(default_factory=ModelConfig)
    grid: tuple[tuple[int, int], ...] = ABLATION_GRID
    seq_len: int = 256
    eval_seq_len: int = 128
    out: Path | None = None
    seed: int = 0

    def check_inputs(self) -> None:
        for name in ("model", "corpus", "calibration", "quantized"):
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise FileNotFoundError(f"{name} file not found: {path}")


_CONFIG_KEYS = {"model", "corpus", "calibration", "quantized", "scheme", "mode", "placements", "calibrate",
                "pretrain", "model_config", "grid", "seq_len", "eval_seq_len", "out", "seed"}


def _dataclass_from(cls, d: dict, what: str):
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(d)
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from exc


def build_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    merged = {**raw, **{k: v for k, v in vars(args).items() if v is not None and k in _CONFIG_KEYS}}
    seed = int(merged.get("seed", 0))
    scheme = merged.get("scheme", "w8a8")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {list(SCHEMES)}")
    calib_d = dict(raw.get("calibrate", {}))
    calib_d["seed"] = seed
    if args.subcommand == "calibrate" and merged.get("mode"):
        calib_d["mode"] = merged["mode"]
    try:
        calib = _dataclass_from(CalibConfig, calib_d, "calibrate")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pre = _dataclass_from(PretrainConfig, {**raw.get("pretrain", {}), "seed": seed}, "pretrain")
    mcfg = _dataclass_from(ModelConfig, raw.get("model_config", {}), "model_config")
    grid = tuple(tuple(int(x) for x in g) for g in merged.get("grid", ABLATION_GRID))
    if not grid or any(len(g) != 2 for g in grid):
        raise ConfigError("grid must be a non-empty list of [samples, epochs] pairs")

    def path(key):
        v = merged.get(key)
        return None if v is None else Path(v)

    return RunConfig(args.subcommand, path("model"), path("corpus"), path("calibration"), path("quantized"),
                     scheme, merged.get("mode"), tuple(merged.get("placements", DEFAULT_PLACEMENTS)), calib, pre,
                     mcfg, grid, int(merged.get("seq_len", 256)), int(merged.get("eval_seq_len", 128)),
                     path("out"), seed)


# -- helpers --------------------------------------------------------------------------

def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"{cfg.subcommand} needs --{' --'.join(missing)}")


def _emit(cfg: RunConfig, report: dict, text: str, beside_artifact: bool = False) -> None:
    """Print the text rendering; write JSON to --out (or next to the artifact written there)."""
    print(text)
    if cfg.out is None:
        return
    target = cfg.out.with_name(cfg.out.name + ".report.json") if beside_artifact else cfg.out
    target.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _qconfig(cfg: RunConfig, model_config: ModelConfig):
    try:
        return make_qconfig(cfg.scheme, model_config, cfg.placements)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_calibration(path: Path) -> Calibration:
    try:
        return Calibration.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{path} is not a calibration file: {exc}") from exc


def _aligned(rows: list[list[str]]) -> str:
    widths = [max(len(x) for x in col) for col in zip(*rows)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


# -- subcommands ----------------------------------------------------------------------

def cmd_pretrain(cfg: RunConfig) -> int:
    _require(cfg, "out")
    tokens = load_tokens(cfg.corpus)
    result = pretrain(tokens, cfg.model_config, cfg.pretrain)
    fileformat.save_float_model(cfg.out, result.model)
    report = {"train_perplexity": result.train_perplexity, "eval_perplexity": result.eval_perplexity,
              "init_eval_perplexity": result.init_eval_perplexity, "final_loss": result.losses[-1],
              "steps": len(result.losses), "vocab": cfg.model_config.vocab}
    text = _aligned([["metric", "value"]] + [[k, f"{v:.4f}" if isinstance(v, float) else str(v)]
                                             for k, v in report.items()])
    _emit(cfg, report, text, beside_artifact=True)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    _require(cfg, "model", "out")
    model = fileformat.load_float_model(cfg.model)
    tokens = load_tokens(cfg.corpus)
    qconfig = _qconfig(cfg, model.config)
    result = calibrate(model, tokens, qconfig, cfg.calib)
    cfg.out.write_text(json.dumps({**result.to_dict(), "qconfig": qconfig.to_dict()}, sort_keys=True) + "\n")
    ppl = quantized_perplexity(model, result, qconfig, tokens, cfg.eval_seq_len)
    report = {"scheme": cfg.scheme, "mode": cfg.calib.mode, "final_loss": result.final_loss,
              "fakequant_perplexity": ppl, "curves": result.curves}
    rows = [["curve", "epoch", "eval loss", "best"]]
    for name, c in result.curves.items():
        rows += [[name, str(i), f"{e:.6g}", f"{b:.6g}"] for i, (e, b) in enumerate(zip(c["eval"], c["best"]))]
    _emit(cfg, report, _aligned(rows) + f"\nfinal loss {result.final_loss:.6g}  perplexity {ppl:.4f}",
          beside_artifact=True)
    return EXIT_OK


def cmd_export(cfg: RunConfig) -> int:
    _require(cfg, "model", "calibration", "out")
    model = fileformat.load_float_model(cfg.model)
    calib = _load_calibration(cfg.calibration)
    qconfig = _qconfig(cfg, model.config)
    qm = compile_calibrated(model, calib, qconfig)
    data = save_quantized(cfg.out, qm)
    if encode_quantized(load_quantized(cfg.out)) != data:
        raise fileformat.FormatError("re-encoding the exported file did not reproduce it")
    weight_bytes = sum(ql.codes.size * ql.scheme.bits // 8 for ql in qm.linears.values())
    print(f"wrote {cfg.out} ({len(data)} bytes, scheme {qm.scheme}, weight payload {weight_bytes} bytes)")
    return EXIT_OK


def last_token_accuracy(logits_fn, tokens: np.ndarray, limit: int = 200, context: int = 128) -> float:
    """Fraction of sentences whose final token is the argmax prediction from its prefix."""
    sents = sentences(tokens)[:limit]
    if not sents:
        raise ConfigError("corpus has no sentences for last-token accuracy")
    hits = 0
    for s in sents:
        s = s[-context:]
        hits += int(np.argmax(logits_fn(s[:-1])[-1]) == s[-1])
    return hits / len(sents)


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "model")
    model = fileformat.load_float_model(cfg.model)
    tokens = load_tokens(cfg.corpus)
    _, held = split(tokens)
    L = cfg.eval_seq_len
    ppl = {"float": perplexity(model, held, seq_len=L)}
    acc = {"float": last_token_accuracy(lambda s: forward_float(model, s), held)}
    ref_q = uniform_qconfig(model.config, 16, 16, "w16a16")
    ref = calibrate(model, tokens, ref_q, CalibConfig(**{**cfg.calib.to_dict(), "epochs": 0}))
    ppl["w16a16"] = quantized_perplexity(model, ref, ref_q, tokens, L)
    report = {"scheme": None, "perplexity": ppl, "last_token_accuracy": acc}
    qm = load_quantized(cfg.quantized) if cfg.quantized else None
    if cfg.calibration is not None:
        calib = _load_calibration(cfg.calibration)
        qconfig = _qconfig(cfg, model.config)
        fused, qp = calib.fused_model(model), calib.qparams.rounded()
        report["scheme"] = cfg.scheme
        ppl["fakequant"] = quantized_perplexity(model, calib, qconfig, tokens, L)
        acc["fakequant"] = last_token_accuracy(lambda s: forward_fakequant(fused, s, qconfig, qp), held)
        if qm is None and cfg.mode in ("int", "all"):
            qm = compile_calibrated(model, calib, qconfig)
        if qm is not None:
            window = held[:L]
            a, b = int_logits(qm, window), forward_fakequant(fused, window, qconfig, qp)
            alpha = qm.taps["head.logits"].alpha
            report["parity"] = {"positions": len(window),
                                "argmax_agreement": float(np.mean(a.argmax(-1) == b.argmax(-1))),
                                "max_logit_code_diff": int(np.round(np.abs(a - b).max() / alpha))}
    if qm is not None:
        report["scheme"] = qm.scheme
        ppl["int"] = int_perplexity(qm, held, L)
        acc["int"] = last_token_accuracy(lambda s: int_logits(qm, s), held)
    report["relative_delta"] = {k: v / ppl["float"] - 1.0 for k, v in ppl.items() if k != "float"}
    rows = [["path", "perplexity", "delta vs float", "last-token acc"]]
    for k, v in ppl.items():
        rows.append([k, f"{v:.4f}", f"{report['relative_delta'].get(k, 0.0):+.4%}",
                     f"{acc[k]:.3f}" if k in acc else "-"])
    _emit(cfg, report, _aligned(rows))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    _require(cfg, "model")
    model = fileformat.load_float_model(cfg.model)
    tokens = load_tokens(cfg.corpus)
    qconfig = _qconfig(cfg, model.config)
    rows = ablate(model, tokens, qconfig, cfg.calib, cfg.grid)
    _emit(cfg, {"scheme": cfg.scheme, "rows": rows}, format_table(rows))
    return EXIT_OK


def cmd_cost(cfg: RunConfig) -> int:
    if cfg.quantized is not None:
        qm = load_quantized(cfg.quantized)
        mcfg, qconfig = qm.config, qm.qconfig
    else:
        mcfg = fileformat.load_float_model(cfg.model).config if cfg.model else cfg.model_config
        qconfig = _qconfig(cfg, mcfg)
    mode = cfg.mode or "prefill"
    try:
        report = cost_report(mcfg, qconfig, cfg.seq_len, mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(cfg, report, format_cost(report))
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "calibrate": cmd_calibrate, "export": cmd_export, "eval": cmd_eval,
            "ablate": cmd_ablate, "cost": cmd_cost}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobilequant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip())
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--scheme", choices=SCHEMES)
        p.add_argument("--mode")
        p.add_argument("--out")
        p.add_argument("--model", help="float model file")
        p.add_argument("--corpus", help="UTF-8 text or little-endian u32 token ids (.ids/.u32)")
        p.add_argument("--calibration", help="calibration JSON from the calibrate subcommand")
        p.add_argument("--quantized", help="quantized model file from export")
        p.add_argument("--seq-len", dest="seq_len", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    tune_allocator()
    try:
        cfg = build_config(args)
        cfg.check_inputs()
        return COMMANDS[cfg.subcommand](cfg)
    except (NumericalError, RequantRangeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fileformat.FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
