"""Operand-bitwidth-weighted operation and memory-traffic counts.

Counting rules for ``n`` processed positions (prefill: n = seq_len; decode:
one new token whose query sees ``seq_len`` keys):

* linear layer d_in -> d_out: n * d_in * d_out MACs at (weight bits x input
  tap bits); weight bytes are the packed code bytes; activation bytes are the
  input and output code bytes;
* attention scores and context products: n_heads * head_dim MACs per
  (query, key) pair, with n(n+1)/2 causal pairs in prefill and seq_len in
  decode;
* the gated MLP product: n * d_ff MACs at (act_out bits x up_out bits);
* key/value cache traffic: prefill writes n rows, decode reads seq_len rows.

``bit_macs`` is MACs times the product of both operand bitwidths.
"""

from __future__ import annotations

import math

from .model import ModelConfig, QConfig

_LINEAR_TAPS = {
    "q": ("attn.qkv_in", "attn.q_out"), "k": ("attn.qkv_in", "attn.k_out"), "v": ("attn.qkv_in", "attn.v_out"),
    "o": ("attn.ctx", "attn.o_out"), "gate": ("mlp.in", "mlp.gate_out"), "up": ("mlp.in", "mlp.up_out"),
    "down": ("mlp.down_in", "mlp.down_out"),
}
MODES = ("prefill", "decode")


def _row(name, kind, macs, a_bits, b_bits, weight_bytes=0.0, act_bytes=0.0, kv_bytes=0.0) -> dict:
    return {"name": name, "kind": kind, "macs": macs, "operand_bits": [a_bits, b_bits],
            "bit_macs": macs * a_bits * b_bits, "weight_bytes": weight_bytes,
            "activation_bytes": act_bytes, "kv_bytes": kv_bytes}


def cost_report(config: ModelConfig, qconfig: QConfig, seq_len: int, mode: str = "prefill") -> dict:
    """Per-layer and total counts for one forward pass."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    qconfig.check(config)
    acts = qconfig.acts
    d, f, H, hd, V = config.d_model, config.d_ff, config.n_heads, config.head_dim, config.vocab
    n = seq_len if mode == "prefill" else 1
    pairs = seq_len * (seq_len + 1) // 2 if mode == "prefill" else seq_len
    dims = {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "gate": (d, f), "up": (d, f), "down": (f, d)}

    def linear(name, d_in, d_out, tin, tout):
        wb = qconfig.weights[name].bits
        ab, ob = acts[tin], acts[tout]
        return _row(name, "linear", n * d_in * d_out, wb, ab, weight_bytes=math.ceil(d_in * d_out * wb / 8),
                    act_bytes=n * (d_in * ab + d_out * ob) / 8)

    rows = []
    for b in range(config.n_blocks):
        p = f"block{b}."
        for lin, (tin, tout) in _LINEAR_TAPS.items():
            rows.append(linear(p + lin, *dims[lin], p + tin, p + tout))
        kb, vb = acts[p + "attn.k_rot"], acts[p + "attn.v_out"]
        kv_rows = n if mode == "prefill" else seq_len
        rows.append(_row(p + "attn.scores", "attention", H * hd * pairs, acts[p + "attn.q_rot"], kb,
                         kv_bytes=kv_rows * d * (kb + vb) / 8))
        rows.append(_row(p + "attn.ctx", "attention", H * hd * pairs, acts[p + "attn.probs"], vb))
        rows.append(_row(p + "mlp.product", "elementwise", n * f, acts[p + "mlp.act_out"], acts[p + "mlp.up_out"]))
    rows.append(linear("head", d, V, "head.in", "head.logits"))

    def total(key, kinds=None):
        return sum(r[key] for r in rows if kinds is None or r["kind"] in kinds)

    totals = {
        "macs": total("macs"),
        "bit_macs": total("bit_macs"),
        "weight_bit_macs": total("bit_macs", {"linear"}),
        "activation_bit_macs": total("bit_macs", {"attention", "elementwise"}),
        "weight_bytes": total("weight_bytes"),
        "activation_bytes": total("activation_bytes"),
        "kv_bytes": total("kv_bytes"),
    }
    totals["bytes"] = totals["weight_bytes"] + totals["activation_bytes"] + totals["kv_bytes"]
    return {"scheme": qconfig.name, "mode": mode, "seq_len": seq_len, "layers": rows, "totals": totals}


def format_cost(report: dict) -> str:
    header = ["layer", "kind", "MACs", "bits", "bit-MACs", "bytes"]
    body = [[r["name"], r["kind"], f"{r['macs']:,}", "x".join(map(str, r["operand_bits"])), f"{r['bit_macs']:,}",
             f"{r['weight_bytes'] + r['activation_bytes'] + r['kv_bytes']:,.0f}"] for r in report["layers"]]
    t = report["totals"]
    body.append(["total", "", f"{t['macs']:,}", "", f"{t['bit_macs']:,}", f"{t['bytes']:,.0f}"])
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths)))
             for line in [header] + body]
    title = f"{report['scheme']} {report['mode']} seq_len={report['seq_len']}"
    return "\n".join([title, *lines])
