import csv
import json

import numpy as np
import pytest

from fepstefan.harness.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main, read_snapshots, write_snapshots
from fepstefan.harness.config import ConfigError, ExperimentSpec, load_config, replica_seed
from fepstefan.harness.experiments import EXPERIMENTS, default_spec
from fepstefan.harness.runner import RunManifest, Task, quorum_met, resolve_workers, run_tasks
from fepstefan.harness.verify import brute_force_generator, run_suite
from fepstefan.lattice import ExclusionConfig, currents

CALLS: list[int] = []


def counting_replica(seed, scale):
    CALLS.append(seed)
    return {"value": seed % 97 * scale, "events": 3}


def failing_replica(seed):
    if seed % 2:
        raise RuntimeError("odd seed")
    return {"value": 1}


# --- configuration ---------------------------------------------------------


TOML = """
kind = "hitting"
sizes = [256]
replicas = 3
base_seed = 7

[profile]
family = "sine"
mean = 0.6
amplitude = 0.2
phase = 0.0
"""


def test_toml_and_json_are_equivalent(tmp_path):
    (tmp_path / "a.toml").write_text(TOML)
    spec = load_config(tmp_path / "a.toml")
    (tmp_path / "b.json").write_text(json.dumps(spec.to_dict()))
    again = load_config(tmp_path / "b.json")
    assert again == spec and again.digest() == spec.digest()
    assert spec.profile_spec()(0.25) == pytest.approx(0.8)


@pytest.mark.parametrize("data", [
    {"kind": "nonsense"},
    {"kind": "hydro", "colour": "red"},
    {"sizes": [10]},
    {"kind": "hydro", "times": [0.5, 0.1]},
    {"kind": "hydro", "replicas": 0},
    {"kind": "hydro", "profile": {"family": "sine", "mean": 0.9, "amplitude": 0.5}},
    {"kind": "hydro", "schema": 99},
])
def test_bad_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict(data)


def test_unparseable_file(tmp_path):
    (tmp_path / "x.toml").write_text("kind = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "x.toml")


def test_digest_ignores_output_directory():
    a = default_spec("hydro", out="one")
    b = default_spec("hydro", out="two")
    c = default_spec("hydro", base_seed=1)
    assert a.digest() == b.digest() != c.digest()


def test_replica_seeds_are_deterministic_and_distinct():
    seeds = {replica_seed(5, n, r) for n in (512, 1024) for r in range(100)}
    assert len(seeds) == 200
    assert replica_seed(5, 512, 3) == replica_seed(5, 512, 3)
    assert all(0 <= s < 2**64 for s in seeds)


def test_every_kind_has_defaults():
    for kind in EXPERIMENTS:
        spec = default_spec(kind)
        assert spec.kind == kind and spec.sizes


# --- runner ----------------------------------------------------------------


def tasks(n, scale=1):
    return [Task(f"r{i:02d}", replica_seed(1, i), counting_replica, {"scale": scale}) for i in range(n)]


def test_runner_resumes_from_checkpoints(tmp_path):
    spec = default_spec("hitting")
    CALLS.clear()
    first, manifest = run_tasks(spec, tasks(4), tmp_path)
    assert len(CALLS) == 4 and manifest.event_counts == {k: 3 for k in first}
    (tmp_path / "replicas" / "r02.json").unlink()
    CALLS.clear()
    second, _ = run_tasks(spec, tasks(4), tmp_path)
    assert CALLS == [replica_seed(1, 2)]
    assert second == first


def test_runner_ignores_checkpoints_of_another_spec(tmp_path):
    run_tasks(default_spec("hitting"), tasks(2), tmp_path)
    CALLS.clear()
    run_tasks(default_spec("hitting", base_seed=9), tasks(2), tmp_path)
    assert len(CALLS) == 2


def test_runner_records_failures_and_quorum(tmp_path):
    spec = default_spec("hitting")
    work = [Task(f"r{i}", i, failing_replica, {}) for i in range(10)]
    results, manifest = run_tasks(spec, work, tmp_path)
    assert len(results) == 5 and len(manifest.failures) == 5
    assert "RuntimeError" in manifest.failures["r1"]
    assert not quorum_met(manifest, 10)
    assert quorum_met(RunManifest("h", "x", failures={"a": "e"}), 10)
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["seeds"]["r3"] == 3


def test_worker_count_env_override(monkeypatch):
    monkeypatch.delenv("FEPSTEFAN_WORKERS", raising=False)
    assert resolve_workers(None) == 1 and resolve_workers(3) == 3
    monkeypatch.setenv("FEPSTEFAN_WORKERS", "2")
    assert resolve_workers(8) == 2


# --- snapshot stream -------------------------------------------------------


def test_snapshot_roundtrip(tmp_path):
    frames = [(0.0, b"\x01\x00\x01"), (0.5, b""), (1.25, bytes(range(10)))]
    write_snapshots(tmp_path / "s.bin", frames)
    assert read_snapshots(tmp_path / "s.bin") == frames
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_snapshots(tmp_path / "bad.bin")


# --- command line ----------------------------------------------------------


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_frozen_initial_data(tmp_path):
    text = "0100100010010001" * 2
    conf = write_config(tmp_path / "c.json", {"kind": "simulate", "times": [0.1, 0.2, 0.3],
                                              "params": {"initial": text}})
    assert main(["simulate", "--config", conf, "--out", str(tmp_path / "o")]) == EXIT_OK
    frames = read_snapshots(tmp_path / "o" / "snapshots.bin")
    assert len(frames) == 3
    assert all(ExclusionConfig.from_bytes(p).to_string() == text for _, p in frames)
    verdict = json.loads((tmp_path / "o" / "verdict.json").read_text())
    assert verdict["pass"] and list(verdict["event_counts"].values()) == [0]


def test_simulate_is_deterministic(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "simulate", "sizes": [128], "times": [0.01, 0.02],
                                              "replicas": 2})
    for name in ("a", "b"):
        assert main(["simulate", "--config", conf, "--seed", "4", "--out", str(tmp_path / name)]) == EXIT_OK
    for name in ("snapshots.bin", "stats.csv", "verdict.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["seeds"] == mb["seeds"]


def test_pde_constant_profile(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "pde", "m": 64, "times": [0.0, 0.01],
                                              "profile": {"family": "constant", "value": 0.7}})
    assert main(["pde", "--config", conf, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_rows(tmp_path / "o" / "fields.csv")
    assert len(rows) == 128 and {float(r["rho"]) for r in rows} == {0.7}


def test_pde_reference_fronts_are_monotone(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "pde", "m": 128, "times": [0.0, 0.01, 0.02, 0.03]})
    assert main(["pde", "--config", conf, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_rows(tmp_path / "o" / "interfaces.csv")
    left = [float(r["u_minus"]) for r in rows]
    right = [float(r["u_plus"]) for r in rows]
    assert np.all(np.diff(np.unwrap(np.array(left) * 2 * np.pi)) >= 0)
    assert np.all(np.diff(right) <= 0)


def test_pde_cfl_violation_is_a_usage_error(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "pde", "m": 64, "times": [0.01], "params": {"dt": 0.01}})
    assert main(["pde", "--config", conf, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == EXIT_USAGE
    assert main(["pde", "--config", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    conf = write_config(tmp_path / "c.json", {"kind": "hydro"})
    assert main(["pde", "--config", conf]) == EXIT_USAGE


def test_sample_command(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "sample", "sizes": [64], "replicas": 3,
                                              "params": {"measure": "ergodic", "density": 0.75}})
    assert main(["sample", "--config", conf, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_rows(tmp_path / "o" / "stats.csv")
    assert [int(r["particles"]) for r in rows] == [48] * 3
    assert all(r["two_phased"] == "True" for r in rows)


def test_experiment_command_small_hitting(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "hitting", "sizes": [128], "replicas": 5})
    code = main(["experiment", "hitting", "--config", conf, "--out", str(tmp_path / "o")])
    verdict = json.loads((tmp_path / "o" / "verdict.json").read_text())
    assert code == (EXIT_OK if verdict["pass"] else EXIT_FAIL)
    assert verdict["quorum_met"] and verdict["failed_replicas"] == 0
    assert (tmp_path / "o" / "summary.csv").exists()


def test_experiment_exit_code_follows_verdict(tmp_path):
    conf = write_config(tmp_path / "c.json", {"kind": "typicality", "sizes": [1024], "replicas": 5})
    code = main(["experiment", "typicality", "--config", conf, "--out", str(tmp_path / "o")])
    verdict = json.loads((tmp_path / "o" / "verdict.json").read_text())
    assert code == (EXIT_OK if verdict["pass"] else EXIT_FAIL)


def test_verify_exact_suite(tmp_path, capsys):
    assert main(["verify", "exact", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("rate_table", "gradient_identity", "stationarity", "detailed_balance", "h_mean", "bijection"):
        assert f"PASS {name} " in out
    saved = json.loads((tmp_path / "verify_exact.json").read_text())
    assert all(v["pass"] for v in saved.values())


def test_generator_oracle_matches_current_differences():
    rng = np.random.default_rng(0)
    rings = (rng.random((50, 20)) < 0.6).astype(np.uint8)
    j = np.array([currents(r) for r in rings])
    assert np.array_equal(brute_force_generator(rings), np.roll(j, 1, axis=1) - j)


def test_property_suite_passes():
    assert all(r.passed for r in run_suite("property"))
