import json
from pathlib import Path

import numpy as np
import pytest

from qtraj.cli import (
    EXIT_CONFIG,
    EXIT_GUARD,
    EXIT_IO,
    EXIT_OK,
    EXIT_REPLAY_MISMATCH,
    main,
    read_csv,
    replay,
    write_csv,
)
from qtraj.config import ConfigError, named_observable, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """
[model]
preset = "two_level"
gamma = 1.0
rabi = 3.0

[engine]
method = "{method}"

[grid]
t_end = 1.0
dt = {dt}
sample_every = 100

[ensemble]
n_traj = {n}
master_seed = 7
block_size = 4

[initial]
basis = {basis}

[observables]
names = ["population:0", "re_coherence:0,1"]

[output]
prefix = "small"
"""


def small(method="euler_order1", dt=1e-3, n=10, basis=1):
    return SMALL.format(method=method, dt=dt, n=n, basis=basis)


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("name", ["rabi.toml", "rabi_master.toml", "homodyne.toml", "cavity.toml"])
def test_shipped_configs_parse(name):
    cfg = parse_config((CONFIGS / name).read_text())
    assert cfg.grid.times.size >= 2
    assert len(cfg.labels) == len(cfg.observables)


def test_rabi_config_values():
    cfg = parse_config((CONFIGS / "rabi.toml").read_text())
    assert cfg.engine.method == "euler_order1"
    assert cfg.ensemble.n_traj == 100 and cfg.ensemble.master_seed == 42
    np.testing.assert_allclose(cfg.model.hamiltonian, [[0, 1.5], [1.5, 0]])
    np.testing.assert_allclose(cfg.initial.states[0], [0, 1])


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda s: s.replace('method = "euler_order1"', 'method = "finite_mu"'), "requires key 'mu'"),
        (lambda s: s.replace("gamma = 1.0", "gamma = 1.0\ncolour = 2"), "unknown key"),
        (lambda s: s.replace('method = "euler_order1"', 'method = "leapfrog"'), "unknown engine"),
        (lambda s: s.replace("n_traj = 10", "n_traj = 0"), "n_traj"),
        (lambda s: s.replace("[grid]\nt_end = 1.0\n", "[grid]\n"), "t_end"),
        (lambda s: s.replace("population:0", "population:5"), "out of range"),
        (lambda s: s.replace("[model]", "[model\n"), "TOML"),
    ],
)
def test_config_errors(edit, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(edit(small()))


def test_non_hermitian_hamiltonian():
    text = """
[model]
hamiltonian = [[0.0, 1.0], [0.0, 0.0]]
[engine]
method = "euler_order1"
[grid]
t_end = 1.0
dt = 0.01
[initial]
basis = 0
[observables]
names = ["population:0"]
"""
    with pytest.raises(ConfigError, match="hamiltonian not Hermitian"):
        parse_config(text)


def test_explicit_observables_and_mixture():
    text = small().replace('names = ["population:0", "re_coherence:0,1"]',
                           'matrices = [[[1.0, 0.0], [0.0, -1.0]]]\nlabels = ["sz"]')
    text = text.replace("basis = 1", "probabilities = [0.25, 0.75]\nbasis_states = [0, 1]")
    cfg = parse_config(text)
    assert cfg.labels == ["sz"]
    np.testing.assert_allclose(cfg.initial.density(), np.diag([0.25, 0.75]))


def test_named_observables():
    np.testing.assert_allclose(named_observable("population:1", 2), np.diag([0, 1]))
    np.testing.assert_allclose(named_observable("re_coherence:0,1", 2), [[0, 0.5], [0.5, 0]])
    np.testing.assert_allclose(named_observable("im_coherence:0,1", 2), [[0, 0.5j], [-0.5j, 0]])
    np.testing.assert_allclose(named_observable("number", 3), np.diag([0, 1, 2]))
    with pytest.raises(ConfigError):
        named_observable("spin", 2)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    times = np.linspace(0, 1, 7)
    mean, se = rng.normal(size=(7, 2)), rng.random((7, 2))
    write_csv(tmp_path / "x.csv", times, mean, se, ["a", "b"])
    header, table = read_csv(tmp_path / "x.csv")
    assert header == ["time", "mean_a", "stderr_a", "mean_b", "stderr_b"]
    assert np.array_equal(table[:, 0], times)
    assert np.array_equal(table[:, [1, 3]], mean) and np.array_equal(table[:, [2, 4]], se)


def _outputs(d):
    return {p.name: p.read_bytes() for p in Path(d).iterdir() if not p.name.endswith("timing.json")}


def test_runs_are_byte_identical_across_workers(tmp_path):
    cfg = write(tmp_path, small(n=20))
    assert main(["run", cfg, "--workers", "1", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", cfg, "--workers", "3", "--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = _outputs(tmp_path / "a"), _outputs(tmp_path / "b")
    assert set(a) == {"small.csv", "small.events.jsonl", "small.manifest.json"}
    assert a == b
    timing = json.loads((tmp_path / "b" / "small.timing.json").read_text())
    assert timing["workers"] == 3 and timing["wall_seconds"] >= 0


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, small(n=20))
    main(["run", cfg, "--workers", "1", "--out", str(tmp_path / "a")])
    main(["run", cfg, "--workers", "1", "--seed", "8", "--out", str(tmp_path / "b")])
    assert _outputs(tmp_path / "a")["small.csv"] != _outputs(tmp_path / "b")["small.csv"]
    manifest = json.loads((tmp_path / "b" / "small.manifest.json").read_text())
    assert manifest["master_seed"] == 8


def test_csv_header_and_sample_rows(tmp_path):
    cfg = write(tmp_path, small())
    main(["run", cfg, "--workers", "1", "--out", str(tmp_path)])
    header, table = read_csv(tmp_path / "small.csv")
    assert header == ["time", "mean_population:0", "stderr_population:0", "mean_re_coherence:0,1", "stderr_re_coherence:0,1"]
    np.testing.assert_allclose(table[:, 0], np.linspace(0, 1, 11), atol=1e-12)


def test_master_equation_output(tmp_path):
    cfg = write(tmp_path, small(method="master_equation"))
    assert main(["run", cfg, "--out", str(tmp_path)]) == EXIT_OK
    _, table = read_csv(tmp_path / "small.csv")
    assert np.all(table[:, 2] == 0)
    assert not (tmp_path / "small.events.jsonl").exists()


def test_coarse_step_is_guard_failure(tmp_path, capsys):
    cfg = write(tmp_path, small(dt=0.5, basis=0))
    assert main(["run", cfg, "--workers", "1", "--out", str(tmp_path)]) == EXIT_GUARD
    assert "step-size guard" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, small().replace("gamma = 1.0", "gamma = -1.0"))
    assert main(["run", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_IO


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 2


def test_replay_matches_log(tmp_path, capsys):
    cfg = write(tmp_path, small(method="waiting_time", n=12, basis=0))
    main(["run", cfg, "--workers", "1", "--out", str(tmp_path)])
    manifest = str(tmp_path / "small.manifest.json")
    logged = [json.loads(line) for line in (tmp_path / "small.events.jsonl").read_text().splitlines()]
    for i in (0, 5, 11):
        events, values, _ = replay(manifest, i)
        assert events == [e for e in logged if e["traj"] == i]
        assert values.shape == (11, 2)
    assert main(["replay", manifest, "5", "--out", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "small.traj5.csv").exists()


def test_replay_detects_tampered_log(tmp_path):
    cfg = write(tmp_path, small(n=4, basis=0))
    main(["run", cfg, "--workers", "1", "--out", str(tmp_path)])
    log = tmp_path / "small.events.jsonl"
    lines = log.read_text().splitlines()
    first = json.loads(lines[0])
    first["t"] += 0.5
    log.write_text("\n".join([json.dumps(first)] + lines[1:]) + "\n")
    assert main(["replay", str(tmp_path / "small.manifest.json"), str(first["traj"])]) == EXIT_REPLAY_MISMATCH


def test_replay_index_out_of_range(tmp_path):
    cfg = write(tmp_path, small(n=4))
    main(["run", cfg, "--workers", "1", "--out", str(tmp_path)])
    assert main(["replay", str(tmp_path / "small.manifest.json"), "4"]) == EXIT_CONFIG


def test_validate_identities(tmp_path, capsys):
    assert main(["validate", "identities", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "validate_identities.json").read_text())
    assert report["suite"] == "identities" and all(c["passed"] for c in report["checks"])
