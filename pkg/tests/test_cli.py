import hashlib
import json
import re

import jsonschema
import pytest

from mobilequant.cli import METRICS_SCHEMA, main
from mobilequant.fileformat import load

SMALL = {
    "model_config": {"d_model": 16, "n_heads": 2, "d_ff": 32, "n_blocks": 1},
    "pretrain": {"steps": 15, "batch_size": 4, "seq_len": 32},
    "calibrate": {"num_samples": 8, "epochs": 1, "batch_size": 8, "eval_samples": 8},
    "eval_seq_len": 64,
    "grid": [[8, 1]],
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(SMALL))
    assert main(["pretrain", "--config", str(d / "cfg.json"), "--out", str(d / "float.qfg")]) == 0
    for scheme in ("w8a8", "w4a8"):
        assert main(["calibrate", "--config", str(d / "cfg.json"), "--model", str(d / "float.qfg"),
                     "--scheme", scheme, "--out", str(d / f"{scheme}.json")]) == 0
        assert main(["export", "--config", str(d / "cfg.json"), "--model", str(d / "float.qfg"), "--scheme", scheme,
                     "--calibration", str(d / f"{scheme}.json"), "--out", str(d / f"{scheme}.qfg")]) == 0
    return d


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_pretrain_deterministic(work):
    again = work / "again.qfg"
    assert main(["pretrain", "--config", str(work / "cfg.json"), "--out", str(again)]) == 0
    assert _sha(again) == _sha(work / "float.qfg")
    header, _ = load(again)
    assert header["config"]["vocab"] == 256
    report = json.loads((work / "again.qfg.report.json").read_text())
    assert report["steps"] == 15


def test_export_headers_and_payload(work, capsys):
    payload = {}
    for scheme in ("w8a8", "w4a8"):
        assert main(["export", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg"),
                     "--scheme", scheme, "--calibration", str(work / f"{scheme}.json"),
                     "--out", str(work / f"{scheme}-b.qfg")]) == 0
        payload[scheme] = int(re.search(r"weight payload (\d+) bytes", capsys.readouterr().out).group(1))
        header, _ = load(work / f"{scheme}.qfg")
        assert header["kind"] == "quantized" and header["scheme"] == scheme
    assert 2 * payload["w4a8"] == payload["w8a8"]


def test_export_is_reproducible(work):
    out = work / "re.qfg"
    assert main(["export", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg"),
                 "--calibration", str(work / "w8a8.json"), "--out", str(out)]) == 0
    assert out.read_bytes() == (work / "w8a8.qfg").read_bytes()


def test_eval_metrics_validate(work, capsys):
    out = work / "metrics.json"
    assert main(["eval", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg"),
                 "--calibration", str(work / "w4a8.json"), "--scheme", "w4a8",
                 "--quantized", str(work / "w4a8.qfg"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, METRICS_SCHEMA)
    assert report["scheme"] == "w4a8"
    assert abs(report["relative_delta"]["w16a16"]) < 1e-3
    assert report["parity"]["max_logit_code_diff"] <= 1
    assert "perplexity" in capsys.readouterr().out


def test_cost_and_ablate(work, capsys):
    out = work / "cost.json"
    assert main(["cost", "--quantized", str(work / "w4a8.qfg"), "--seq-len", "32", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["scheme"] == "w4a8"
    assert main(["cost", "--scheme", "w8a8", "--mode", "decode", "--seq-len", "64"]) == 0
    assert main(["ablate", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg")]) == 0
    assert "Block-wise" in capsys.readouterr().out


def test_config_errors_exit_2(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["cost", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["cost", "--config", str(bad)]) == 2
    assert main(["cost", "--mode", "train"]) == 2
    assert main(["export", "--model", str(work / "float.qfg")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["cost", "--scheme", "w3a3"])
    assert exc.value.code == 2


def test_numeric_failure_exits_3(work):
    assert main(["calibrate", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg"),
                 "--scheme", "w8a16", "--out", str(work / "w8a16.json")]) == 0
    assert main(["export", "--config", str(work / "cfg.json"), "--model", str(work / "float.qfg"),
                 "--scheme", "w8a16", "--calibration", str(work / "w8a16.json"),
                 "--out", str(work / "w8a16.qfg")]) == 3


def test_io_failures_exit_4(work, tmp_path):
    assert main(["eval", "--model", str(tmp_path / "missing.qfg")]) == 4
    broken = tmp_path / "broken.qfg"
    data = bytearray((work / "w8a8.qfg").read_bytes())
    data[100] ^= 1
    broken.write_bytes(bytes(data))
    assert main(["cost", "--quantized", str(broken)]) == 4
