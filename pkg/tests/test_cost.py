import pytest

from mobilequant.cost import cost_report, format_cost
from mobilequant.model import ModelConfig, make_qconfig

CFG = ModelConfig()


def test_decode_much_cheaper_than_prefill():
    qc = make_qconfig("w8a8", CFG)
    pre = cost_report(CFG, qc, 256, "prefill")["totals"]
    dec = cost_report(CFG, qc, 256, "decode")["totals"]
    assert dec["macs"] * 50 < pre["macs"]
    assert dec["kv_bytes"] == pre["kv_bytes"]


def test_weight_bytes_halve_at_w4():
    w8 = cost_report(CFG, make_qconfig("w8a8", CFG), 64)["totals"]
    w4 = cost_report(CFG, make_qconfig("w4a8", CFG), 64)["totals"]
    assert w4["weight_bytes"] * 2 == w8["weight_bytes"]
    assert w4["activation_bit_macs"] == w8["activation_bit_macs"]


def test_activation_width_scales_linear_bit_macs():
    a8 = cost_report(CFG, make_qconfig("w8a8", CFG), 32)["totals"]
    a16 = cost_report(CFG, make_qconfig("w8a16", CFG), 32)["totals"]
    assert a16["weight_bit_macs"] == 2 * a8["weight_bit_macs"]


def test_invalid_arguments():
    qc = make_qconfig("w8a8", CFG)
    with pytest.raises(ValueError):
        cost_report(CFG, qc, 8, "train")
    with pytest.raises(ValueError):
        cost_report(CFG, qc, 0)


def test_format_lists_every_layer():
    rep = cost_report(CFG, make_qconfig("w4a8", CFG), 16)
    lines = format_cost(rep).splitlines()
    assert lines[0] == "w4a8 prefill seq_len=16"
    assert len(lines) == 2 + len(rep["layers"]) + 1
    assert lines[-1].startswith("total")
