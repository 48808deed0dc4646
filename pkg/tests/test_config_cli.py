import json
import os

import pytest

from rdexpand._validation import ConfigurationError
from rdexpand.cli import main
from rdexpand.config import SEED_ENV, default_config, parse_config

DOUBLING_TOML = """
seed = 7
[observable]
kind = "cosine"
[[alphabet]]
d = 2
prob = 1.0
[monte_carlo]
N = 200
checkpoints = [32, 64, 128]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_minimal_config(tmp_path):
    cfg = parse_config(write(tmp_path, "[[alphabet]]\nd = 2\n"))
    assert cfg.probabilities == [1.0]
    assert cfg.beta == pytest.approx(0.6)
    assert cfg.M == 1024 and cfg.symbols[0]["H"] >= 2 * 3.14159


def test_default_config_digest_stable():
    assert default_config().digest() == default_config().digest()


def test_bad_probabilities(tmp_path):
    text = "[[alphabet]]\nd = 2\nprob = 0.7\n[[alphabet]]\nd = 3\nprob = 0.7\n"
    with pytest.raises(ConfigurationError, match="probabilities"):
        parse_config(write(tmp_path, text))


def test_errors_collected(tmp_path):
    text = "[[alphabet]]\nd = 1\nb = 2.0\n[grid]\nM = 4\n[rates]\np = 4\n"
    with pytest.raises(ConfigurationError) as info:
        parse_config(write(tmp_path, text))
    errs = info.value.errors
    assert len(errs) >= 4
    assert any(e.startswith("alphabet[0].d") for e in errs)
    assert any(e.startswith("rates.p") for e in errs)


def test_bad_toml_and_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not valid TOML"):
        parse_config(write(tmp_path, "seed = = 1"))
    with pytest.raises(ConfigurationError, match="cannot read"):
        parse_config(str(tmp_path / "missing.toml"))


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "99")
    assert default_config().seed == 99
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigurationError, match=SEED_ENV):
        default_config()


def run(args, out):
    return main(args + ["--out-dir", str(out)])


def load(out, name):
    with open(os.path.join(out, f"{name}.json"), encoding="utf-8") as fh:
        return json.load(fh)


def test_cli_blocks(tmp_path, capsys):
    assert run(["blocks", "--n", "10"], tmp_path) == 0
    res = load(tmp_path, "blocks")["result"]
    assert res["f"] == 6 and res["F"] == 64 and res["block_length"] == 8
    assert res["gap_total"] == 512
    lines = (tmp_path / "blocks.csv").read_text().splitlines()
    assert lines[0] == "kind,index,start,length"
    assert len(lines) == 1 + 128
    assert str(tmp_path / "blocks.json") in capsys.readouterr().out


def test_cli_variance_doubling(tmp_path):
    cfg = write(tmp_path, DOUBLING_TOML)
    assert run(["variance", "--config", cfg], tmp_path) == 0
    doc = load(tmp_path, "variance")
    assert doc["result"]["sigma2_op"] == pytest.approx(0.5, abs=1e-9)
    assert doc["result"]["verdict"] == "positive-variance"
    assert doc["seed"] == 7 and doc["schema"] == 1
    assert os.path.exists(tmp_path / "variance.meta.json")


def test_cli_deterministic(tmp_path):
    cfg = write(tmp_path, DOUBLING_TOML)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["variance", "--config", cfg], a) == 0
    assert run(["variance", "--config", cfg], b) == 0
    assert (a / "variance.json").read_bytes() == (b / "variance.json").read_bytes()


def test_cli_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2
    bad = write(tmp_path, "[[alphabet]]\nd = 1\n")
    assert run(["blocks", "--config", bad], tmp_path) == 2
    assert "alphabet[0].d" in capsys.readouterr().err


def test_cli_failure_marker(tmp_path):
    assert run(["blocks", "--n", "6"], tmp_path) == 1
    body = json.loads((tmp_path / "blocks.FAILED").read_text())
    assert body["error"] == "FeasibilityError"
    assert run(["blocks", "--n", "10"], tmp_path) == 0
    assert not (tmp_path / "blocks.FAILED").exists()


def test_cli_report(tmp_path):
    assert run(["blocks", "--n", "10"], tmp_path) == 0
    assert run(["blocks", "--n", "6"], tmp_path / "x") == 1
    assert run(["report"], tmp_path) == 0
    md = (tmp_path / "summary.md").read_text()
    assert "| blocks | F | 64 |" in md
    assert (tmp_path / "summary.csv").read_text().startswith("report,key,value\n")
