import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from pwabarrier.cli import main
from pwabarrier.config import ConfigError, RunConfig, load, loads
from pwabarrier.scenario import read_samples

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config(tmp_path, **over):
    raw = {"system": {"builtin": "linear1d"}, "safe_set": {"lo": [-2.5], "hi": [2.5]},
           "initial_set": {"lo": [-0.5], "hi": [0.5]}, "segments": [9], "T": 10, "N": 3000}
    raw.update(over)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = load(path)
    again = loads(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_defaults_are_explicit():
    cfg = loads("system: {builtin: linear1d}\n")
    d = cfg.to_dict()
    assert d["epsilon"] == 0.005 and d["M"] == 1.0 and d["bisection_depth"] == 10 and d["beta"] == 1e-9


@pytest.mark.parametrize("text,needle", [
    ("system: {builtin: linear1d}\ninitial_set: {lo: [-3], hi: [0]}\n", ":2: initial_set"),
    ("system: {builtin: nope}\n", "unknown benchmark"),
    ("system: {builtin: linear1d}\nsegments: [0]\n", "segments"),
    ("system: {builtin: linear1d}\nbeta: 0.1\nN: 10\n", "exactly one"),
    ("system: {builtin: linear1d}\nepsilon: 2\n", "epsilon"),
    ("system: {builtin: linear1d}\nfoo: 1\n", "unknown keys"),
    ("system: {builtin: pendulum-nndm}\n", "activation"),
    ("system: [unclosed\n", "invalid YAML"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        loads(text)


def test_gen_samples(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["gen-samples", "--benchmark", "linear1d", "--n", "5", "--seed", "0", "--out", str(out)]) == 0
    assert read_samples(out).samples.shape == (5, 1)
    first = out.read_text()
    main(["gen-samples", "--benchmark", "linear1d", "--n", "5", "--seed", "0", "--out", str(out)])
    assert out.read_text() == first


def test_gen_samples_dubins_heading_only(tmp_path):
    out = tmp_path / "s.csv"
    main(["gen-samples", "--benchmark", "dubins", "--n", "50", "--seed", "1", "--out", str(out)])
    s = read_samples(out).samples
    assert s.shape == (50, 3) and np.all(s[:, :2] == 0)


@pytest.mark.parametrize("args", [["--benchmark", "nope", "--n", "5"], ["--benchmark", "linear1d", "--n", "0"]])
def test_gen_samples_errors(tmp_path, args, capsys):
    assert main(["gen-samples", *args, "--out", str(tmp_path / "s.csv")]) == 1
    assert "error" in capsys.readouterr().err


def certify_once(tmp_path, name="r.json", **over):
    cfg = small_config(tmp_path, **over)
    samples = tmp_path / "s.csv"
    if not samples.exists():
        main(["gen-samples", "--benchmark", "linear1d", "--n", "3000", "--seed", "0", "--out", str(samples)])
    out = tmp_path / name
    code = main(["certify", "--config", str(cfg), "--samples", str(samples), "--out", str(out)])
    return code, out, cfg


def test_certify_report_and_determinism(tmp_path):
    code, out, _ = certify_once(tmp_path)
    code2, out2, _ = certify_once(tmp_path, "r2.json")
    a, b = json.loads(out.read_text()), json.loads(out2.read_text())
    assert code == code2 and code in (0, 2)
    assert set(a["timing_seconds"]) >= {"relaxation", "triples", "build", "solve"}
    for k in ("gamma", "c", "zeta", "zeta_clamped", "beta", "epsilon", "delta", "M", "N", "ell", "d", "fingerprint"):
        assert k in a["certificate"]
    assert a["certificate"]["N"] == 3000
    a.pop("timing_seconds")
    b.pop("timing_seconds")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_certify_exit_code_matches_vacuity(tmp_path):
    code, out, _ = certify_once(tmp_path)
    cert = json.loads(out.read_text())["certificate"]
    assert code == (2 if cert["zeta"] <= 0 else 0)


def test_certify_bad_initial_set(tmp_path, capsys):
    cfg = small_config(tmp_path, initial_set={"lo": [-3.0], "hi": [0.0]})
    samples = tmp_path / "s.csv"
    samples.write_text("0.0\n")
    assert main(["certify", "--config", str(cfg), "--samples", str(samples)]) == 1
    assert "X0 subset of Xs" in capsys.readouterr().err


def test_certify_too_few_samples(tmp_path, capsys):
    cfg = small_config(tmp_path)
    samples = tmp_path / "s.csv"
    samples.write_text("0.0\n0.01\n")
    assert main(["certify", "--config", str(cfg), "--samples", str(samples), "--beta", "1e-9"]) == 1
    assert "needs" in capsys.readouterr().err


def test_certify_malformed_samples(tmp_path, capsys):
    cfg = small_config(tmp_path)
    samples = tmp_path / "s.csv"
    samples.write_text("0.0\nabc\n")
    assert main(["certify", "--config", str(cfg), "--samples", str(samples)]) == 1
    assert ":2:" in capsys.readouterr().err


def test_validate_round_trip(tmp_path):
    code, out, cfg = certify_once(tmp_path)
    res = tmp_path / "v.json"
    vcode = main(["validate", "--config", str(cfg), "--certificate", str(out), "--trials", "2000", "--seed", "1",
                  "--heldout", "500", "--out", str(res)])
    v = json.loads(res.read_text())
    assert vcode == 0 and v["consistent"]
    assert v["safety"]["probability"] >= v["certified_zeta_clamped"]
    assert 0.0 <= v["onestep_violation_fraction"] <= 1.0
