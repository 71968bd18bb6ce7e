import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from clocksync.cli import compute_row, execute, fmt, main
from clocksync.config import ConfigError, complex_array, encode_complex, from_dict, parse_config, serialize
from clocksync.estimation import nogo_sweep
from clocksync.protocols import scenario_eddington

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.yaml"))

MINIMAL = """
scenario: {builtin: eddington, params: {omega: 1.0, transit: 1.0, measure_delay: 3.0}}
channel: {model: mixture, epsilon: 1.0}
frame: {delta: 0.2}
run: {mode: exact}
"""

SWEEP = """
scenario: {builtin: eddington, params: {omega: 1.0, transit: 1.0, measure_delay: 3.0}}
channel: {model: mixture, epsilon: 0.0}
frame: {delta_grid: {start: -1.0, stop: 1.0, num: 5}}
run: {mode: exact}
sweep: {parameter: epsilon, values: [0, 0.25, 0.5, 0.75, 1]}
"""

SAMPLED = """
scenario: {builtin: eddington, params: {omega: 1.0, transit: 1.0, measure_delay: 3.0}}
channel: {model: noiseless}
frame: {delta: 0.3}
run: {mode: sampled, shots: 10000}
estimate: {grid: {start: -1.0, stop: 1.0, num: 401}}
seed: 5
"""


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


# -- parsing -----------------------------------------------------------------------

def test_minimal_config_parses():
    cfg = parse_config(MINIMAL)
    assert cfg.scenario["builtin"] == "eddington"
    assert cfg.channel == {"model": "mixture", "epsilon": 1.0}
    assert cfg.delta == 0.2 and cfg.mode == "exact" and cfg.output_format == "csv"


def test_epsilon_out_of_range_names_field_and_range():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace("epsilon: 1.0", "epsilon: 1.5"))
    assert any("channel.epsilon" in e and "[0, 1]" in e for e in info.value.errors)


def test_all_errors_are_reported():
    text = """
scenario: {builtin: eddingtn, params: {}}
channel: {model: mixture, epsilon: 2}
run: {mode: sampled, shots: 10}
frame: {delta: 0.0}
output: {format: xml}
"""
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    joined = "\n".join(info.value.errors)
    for needle in ("scenario.builtin", "channel.epsilon", "seed: required", "output.format", "estimate.grid"):
        assert needle in joined
    assert len(info.value.errors) >= 5


@pytest.mark.parametrize("patch,needle", [
    (("transit: 1.0", "transit: -1.0"), "durations must be >= 0"),
    (("model: mixture, epsilon: 1.0", "model: telegraph"), "unknown model"),
    (("omega: 1.0", "omega: 1.0, speed: 3"), "unknown parameter"),
    (("run: {mode: exact}", "run: {mode: both}"), "run.mode"),
    (("frame: {delta: 0.2}", "frame: {delta: 0.2}\nsweep: {parameter: sigma, values: [1]}"), "sweep.parameter"),
])
def test_validation_errors(patch, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace(*patch))
    assert needle in str(info.value)


def test_invalid_yaml():
    with pytest.raises(ConfigError):
        parse_config("scenario: [unclosed")


@pytest.mark.parametrize("text", [MINIMAL, SWEEP, SAMPLED] + [p.read_text() for p in CONFIGS])
def test_round_trip(text):
    cfg = parse_config(text)
    assert parse_config(serialize(cfg)) == cfg


def test_complex_arrays():
    z = complex_array({"re": [1, 0], "im": [0, 2]})
    assert np.allclose(z, [1, 2j])
    assert np.allclose(complex_array(encode_complex(z)), z)
    assert np.allclose(complex_array([[1, 0], [0, 1]]), np.eye(2))
    with pytest.raises(ValueError):
        complex_array({"real": [1]})


def test_custom_timeline_errors_are_collected():
    data = {
        "scenario": {
            "subsystems": [{"id": "q", "owner": "Alice", "levels": [[0, 1], [1, 1]]}],
            "events": [["Alice", -1, "prepare", {"targets": ["q"]}],
                       ["Carol", 0, "send", {"subsystem": "q", "transit": 1}],
                       ["Alice", 0, "teleport", {}]],
        }
    }
    with pytest.raises(ConfigError) as info:
        from_dict(data)
    joined = "\n".join(info.value.errors)
    assert "events[0].proper_time" in joined and "Carol" in joined and "teleport" in joined


# -- execution ---------------------------------------------------------------------

def test_sweep_reproduces_nogo_table(tmp_path):
    results = execute(parse_config(SWEEP), tmp_path, echo=lambda s: None)
    ref = nogo_sweep(scenario_eddington(1.0, 1.0, 3.0), np.linspace(-1, 1, 5), [0, 0.25, 0.5, 0.75, 1])
    for got, want in zip(results, ref):
        assert got.values["noise_value"] == want.noise_value
        assert got.values["delta"] == want.delta
        assert abs(got.values["trace_distance_max"] - want.trace_distance_max) <= 1e-12
        assert abs(got.values["qfi"] - want.qfi) <= 1e-12
    rows = read_csv(tmp_path / "results.csv")
    assert list(rows[0]) == ["noise_value", "delta", "trace_distance_max", "qfi", "mle_estimate", "mle_stderr", "shots"]
    assert rows[0]["mle_estimate"] == "" and float(rows[-1]["trace_distance_max"]) <= 1e-10


def test_exact_fully_dephased_summary(tmp_path, capsys):
    text = SWEEP.replace("epsilon: 0.0", "epsilon: 1.0").replace(
        "sweep: {parameter: epsilon, values: [0, 0.25, 0.5, 0.75, 1]}", "")
    assert main([str(self_write(tmp_path, text)), "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[0]
    td = float(line.split("trace_distance_max=")[1].split()[0])
    assert td <= 1e-10


def self_write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_sampled_mle_summary(tmp_path, capsys):
    assert main([str(self_write(tmp_path, SAMPLED)), "--out", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "results.csv")[0]
    est, se = float(row["mle_estimate"]), float(row["mle_stderr"])
    assert abs(est - 0.3) <= 3 * se and int(row["shots"]) == 10_000
    assert "mle_estimate=" in capsys.readouterr().out
    counts = read_csv(tmp_path / "outcomes.csv")
    assert sum(int(r["count"]) for r in counts) == 10_000


def test_outputs_are_byte_identical(tmp_path):
    cfg = self_write(tmp_path, SAMPLED)
    for fmt_name in ("csv", "json"):
        a, b = tmp_path / f"a_{fmt_name}", tmp_path / f"b_{fmt_name}"
        assert main([str(cfg), "--out", str(a), "--format", fmt_name]) == 0
        assert main([str(cfg), "--out", str(b), "--format", fmt_name]) == 0
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes()


def test_parallel_rows_match_serial(tmp_path):
    cfg = self_write(tmp_path, SWEEP)
    assert main([str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert main([str(cfg), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    for name in ("results.csv", "outcomes.csv", "states.csv"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_seed_override_changes_sampled_output(tmp_path):
    cfg = self_write(tmp_path, SAMPLED)
    main([str(cfg), "--out", str(tmp_path / "a")])
    main([str(cfg), "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "outcomes.csv").read_bytes() != (tmp_path / "b" / "outcomes.csv").read_bytes()


def test_json_state_dump_is_lossless(tmp_path):
    assert main([str(self_write(tmp_path, MINIMAL.replace("epsilon: 1.0", "epsilon: 0.3"))),
                 "--out", str(tmp_path), "--format", "json"]) == 0
    rows = json.loads((tmp_path / "states.json").read_text())
    bob = [r for r in rows if r["actor"] == "Bob"]
    rho = np.zeros((2, 2), dtype=complex)
    for r in bob:
        rho[r["row"], r["col"]] = complex(r["re"], r["im"])
    row = compute_row(parse_config(MINIMAL.replace("epsilon: 1.0", "epsilon: 0.3")), 0)
    ref = [s for s in row.states if s["actor"] == "Bob"]
    assert all(rho[s["row"], s["col"]] == complex(s["re"], s["im"]) for s in ref)


def test_fmt_uses_17_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(None) == "" and fmt(3) == "3"
    assert float(fmt(1 / 3)) == 1 / 3


def test_exit_codes(tmp_path, capsys):
    assert main([str(tmp_path / "missing.yaml")]) == 1
    assert main([str(self_write(tmp_path, MINIMAL.replace("epsilon: 1.0", "epsilon: 1.5")))]) == 1
    early = MINIMAL.replace("measure_delay: 3.0", "measure_delay: 0.5")
    assert main([str(self_write(tmp_path, early, "early.yaml")), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "event 3 (Bob)" in err


@pytest.mark.parametrize("path", CONFIGS, ids=[p.stem for p in CONFIGS])
def test_bundled_configs_run(path, tmp_path):
    start = time.perf_counter()
    assert main([str(path), "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - start < 60
