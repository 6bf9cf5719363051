"""Command-line batch runner: ``run``, ``validate`` and ``replay``.

Output files for ``run`` (``<dir>/<prefix>.*``):

``.csv``
    header ``time,mean_<label>,stderr_<label>,...``; one row per sample time,
    every number written with 17 significant digits;
``.events.jsonl``
    one ``{"traj": i, "t": time, "channel": m}`` object per jump, ordered by
    trajectory then time (jump engines only, when ``[output] events`` is true);
``.manifest.json``
    config echo, seed, block size and the random-stream derivation;
``.timing.json``
    wall time and worker count, kept apart so the other files are
    byte-identical across repeated runs and worker counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, rng
from .config import MASTER_EQUATION, ConfigError, RunConfig, config_from_dict, load_config, with_seed
from .diffusion_engine import DiffusionMethod
from .ensemble_stats import EnsembleSpec, _propagate, default_workers, run_ensemble
from .jump_engine import NormIncreaseError, StepSizeError, ZeroNormJumpError
from .master_engine import me_evolve
from .validation import SUITES, run_suite

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_GUARD = 4
EXIT_NUMERIC = 5
EXIT_IO = 6
EXIT_VALIDATION = 7
EXIT_REPLAY_MISMATCH = 8

MANIFEST_FORMAT = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, times, mean, stderr, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["time"]
        for lab in labels:
            header += [f"mean_{lab}", f"stderr_{lab}"]
        w.writerow(header)
        for s, t in enumerate(times):
            row = [_fmt(t)]
            for j in range(len(labels)):
                row += [_fmt(mean[s, j]), _fmt(stderr[s, j])]
            w.writerow(row)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float table of a results CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def write_events(path: Path, traj, times, channels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, t, c in zip(traj, times, channels):
            fh.write(json.dumps({"traj": int(i), "t": float(t), "channel": int(c)}) + "\n")


def _has_jumps(method: str) -> bool:
    return method not in (MASTER_EQUATION, DiffusionMethod.ITO_COMPLEX.value, DiffusionMethod.ITO_REAL.value)


def _paths(out_dir: Path, prefix: str) -> dict[str, Path]:
    return {k: out_dir / f"{prefix}.{k}" for k in ("csv", "events.jsonl", "manifest.json", "timing.json")}


def manifest_for(cfg: RunConfig, files: dict[str, str]) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "artifact_version": __version__,
        "numpy_version": np.__version__,
        "config": cfg.raw,
        "engine": cfg.engine.method,
        "master_seed": cfg.ensemble.master_seed,
        "n_traj": cfg.ensemble.n_traj,
        "block_size": cfg.ensemble.block_size,
        "labels": cfg.labels,
        "streams": {
            **rng.describe(),
            "trajectory": "trajectory i draws its dynamics from (master_seed, i, lane 0) "
            "and its initial state from (master_seed, i, lane 1)",
        },
        "files": files,
    }


def execute(cfg: RunConfig, workers: int = 1, out_dir: str | None = None) -> dict[str, Path]:
    """Run a validated config and write its output files; returns their paths."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    t0 = time.perf_counter()
    method = cfg.engine.method
    events = None
    if method == MASTER_EQUATION:
        tr = me_evolve(cfg.model, cfg.initial.density(), cfg.grid, cfg.observables, keep_states=False)
        times, mean, stderr = tr.times, tr.values, np.zeros_like(tr.values)
    else:
        keep = cfg.output.events and _has_jumps(method)
        res = run_ensemble(
            cfg.model, cfg.initial, cfg.grid, cfg.observables, method,
            cfg.ensemble.n_traj, cfg.ensemble.master_seed,
            mu=cfg.engine.mu, scheme=cfg.engine.scheme, delta_p_max=cfg.engine.delta_p_max,
            workers=workers, block_size=cfg.ensemble.block_size, keep_jumps=keep,
        )
        times, mean, stderr, events = res.times, res.mean, res.stderr, res.jumps
    wall = time.perf_counter() - t0

    out.mkdir(parents=True, exist_ok=True)
    paths = _paths(out, cfg.output.prefix)
    write_csv(paths["csv"], times, mean, stderr, cfg.labels)
    files = {"csv": paths["csv"].name}
    if events is not None:
        write_events(paths["events.jsonl"], events.traj, events.time, events.channel)
        files["events"] = paths["events.jsonl"].name
    else:
        del paths["events.jsonl"]
    with open(paths["manifest.json"], "w", encoding="utf-8") as fh:
        json.dump(manifest_for(cfg, files), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["timing.json"], "w", encoding="utf-8") as fh:
        json.dump({"wall_seconds": wall, "workers": workers}, fh, indent=2)
        fh.write("\n")
    return paths


def replay(manifest_path: str, traj_index: int) -> tuple[list[dict], np.ndarray, RunConfig]:
    """Re-run one trajectory of a recorded ensemble; returns its events, values and config."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = config_from_dict(manifest["config"])
    if cfg.engine.method == MASTER_EQUATION:
        raise ConfigError("master_equation runs have no trajectories to replay")
    if not 0 <= traj_index < cfg.ensemble.n_traj:
        raise ConfigError(f"trajectory index {traj_index} outside 0..{cfg.ensemble.n_traj - 1}")
    spec = EnsembleSpec(
        cfg.model, cfg.initial, cfg.grid, tuple(cfg.observables), cfg.engine.method,
        cfg.ensemble.master_seed, cfg.engine.mu, cfg.engine.scheme, cfg.engine.delta_p_max,
    )
    res = _propagate(spec, np.array([traj_index]))
    events = [
        {"traj": traj_index, "t": float(t), "channel": int(c)} for t, c in zip(res.jump_time, res.jump_channel)
    ]
    return events, res.values[0], cfg


def _logged_events(manifest_path: str, traj_index: int) -> list[dict] | None:
    with open(manifest_path, encoding="utf-8") as fh:
        files = json.load(fh).get("files", {})
    if "events" not in files:
        return None
    path = Path(manifest_path).parent / files["events"]
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return [e for e in map(json.loads, fh) if e["traj"] == traj_index]


# -- argument handling ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtraj", description="Quantum trajectory ensembles and self-checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an ensemble described by a TOML config")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    run.add_argument("--seed", type=int, default=None, help="override [ensemble] master_seed")
    run.add_argument("--out", default=None, help="output directory (overrides [output] dir)")

    val = sub.add_parser("validate", help="run a built-in self-check suite")
    val.add_argument("suite", choices=SUITES + ("all",))
    val.add_argument("--fraction", type=float, default=1.0, help="scale sample counts (tolerances widen as 1/sqrt)")
    val.add_argument("--out", default=None, help="write the JSON report into this directory")

    rep = sub.add_parser("replay", help="re-run one trajectory of a recorded run")
    rep.add_argument("manifest")
    rep.add_argument("traj_index", type=int)
    rep.add_argument("--out", default=None, help="write <prefix>.traj<i>.csv / .jsonl into this directory")
    return p


def _error(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ConfigError("--workers must be at least 1")
    paths = execute(cfg, workers, args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


def _cmd_validate(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    reports = [run_suite(s, args.fraction).as_dict() for s in suites]
    text = json.dumps(reports if len(reports) > 1 else reports[0], indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"validate_{args.suite}.json").write_text(text + "\n", encoding="utf-8")
    failed = [f"{r['suite']}.{c['name']} measured {c['measured']:.6g}, expected {c['expected']:.6g} "
              f"+/- {c['tolerance']:.3g}" for r in reports for c in r["checks"] if not c["passed"]]
    for line in failed:
        print(f"FAILED {line}", file=sys.stderr)
    return EXIT_VALIDATION if failed else EXIT_OK


def _cmd_replay(args) -> int:
    events, values, cfg = replay(args.manifest, args.traj_index)
    for e in events:
        print(json.dumps(e))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.output.prefix}.traj{args.traj_index}"
        write_csv(out / f"{stem}.csv", cfg.grid.times, values, np.zeros_like(values), cfg.labels)
        write_events(out / f"{stem}.jsonl", [e["traj"] for e in events], [e["t"] for e in events],
                     [e["channel"] for e in events])
    logged = _logged_events(args.manifest, args.traj_index)
    if logged is None:
        print("no event log to compare against", file=sys.stderr)
        return EXIT_OK
    if logged != events:
        return _error(f"replayed events of trajectory {args.traj_index} differ from the log", EXIT_REPLAY_MISMATCH)
    print(f"trajectory {args.traj_index}: {len(events)} events, identical to the log", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate, "replay": _cmd_replay}[args.command]
    try:
        return handler(args)
    except StepSizeError as exc:
        return _error(f"step-size guard: {exc}", EXIT_GUARD)
    except ConfigError as exc:
        return _error(f"config: {exc}", EXIT_CONFIG)
    except (NormIncreaseError, ZeroNormJumpError, FloatingPointError) as exc:
        return _error(f"numerical failure: {exc}", EXIT_NUMERIC)
    except (OSError, json.JSONDecodeError) as exc:
        return _error(f"I/O: {exc}", EXIT_IO)
    except ValueError as exc:
        return _error(f"invalid input: {exc}", EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
