"""Run configuration: TOML text to validated dataclasses.

Sections and keys (unknown keys are errors)::

    [model]        preset = "two_level" | "damped_cavity" | "three_level", plus the
                   preset's parameters; or hamiltonian / hamiltonian_imag and
                   jump_ops / jump_ops_imag as nested arrays
    [engine]       method, mu, scheme, delta_p_max
    [grid]         t_start, t_end, dt, sample_every
    [ensemble]     n_traj, master_seed, block_size
    [initial]      basis = k | amplitudes (+ amplitudes_imag) |
                   probabilities with basis_states (a mixture of basis states)
    [observables]  names = ["population:0", "projector:1", "number", ...],
                   optional matrices / matrices_imag / labels for explicit operators
    [output]       dir, prefix, events
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .ensemble_stats import DEFAULT_BLOCK, ENGINES, InitialMixture
from .grid import TimeGrid
from .jump_engine import DELTA_P_MAX
from .presets import PRESET_GROUND, PRESETS
from .quantum_core import HOMODYNE_SCHEMES, DimensionError, LindbladModel, basis_state, normalize

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MASTER_EQUATION = "master_equation"
ALL_ENGINES = ENGINES + (MASTER_EQUATION,)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class EngineConfig:
    method: str = "euler_order1"
    mu: float | None = None
    scheme: str = "two_phase"
    delta_p_max: float = DELTA_P_MAX


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int = 100
    master_seed: int = 0
    block_size: int = DEFAULT_BLOCK


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "."
    prefix: str = "run"
    events: bool = True


@dataclass
class RunConfig:
    model: LindbladModel
    preset: str | None
    grid: TimeGrid
    engine: EngineConfig
    ensemble: EnsembleConfig
    initial: InitialMixture
    observables: list[np.ndarray]
    labels: list[str]
    output: OutputConfig
    raw: dict = field(default_factory=dict)


_SECTIONS = ("model", "engine", "grid", "ensemble", "initial", "observables", "output")


def _check_keys(section: str, table: dict, allowed) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(extra)}")


def _number(section: str, key: str, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _complex_array(section: str, key: str, table: dict, ndim: int) -> np.ndarray:
    try:
        re = np.array(table[key], dtype=float)
        im = np.array(table.get(key + "_imag", np.zeros_like(re)), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} must be a numeric array: {exc}") from None
    if re.shape != im.shape:
        raise ConfigError(f"[{section}] {key} and {key}_imag have different shapes {re.shape} and {im.shape}")
    if re.ndim != ndim:
        raise ConfigError(f"[{section}] {key} must have {ndim} dimensions, got shape {re.shape}")
    return re + 1j * im


def _parse_model(table: dict) -> tuple[LindbladModel, str | None]:
    if "preset" in table:
        name = table["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
        builder, params_cls = PRESETS[name]
        allowed = [f.name for f in fields(params_cls)]
        _check_keys("model", table, ["preset", *allowed])
        kwargs = {}
        for k in allowed:
            if k in table:
                kwargs[k] = _number("model", k, table[k], int if k == "n_max" else float)
        try:
            return builder(params_cls(**kwargs)), name
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None
    _check_keys("model", table, ["hamiltonian", "hamiltonian_imag", "jump_ops", "jump_ops_imag"])
    if "hamiltonian" not in table:
        raise ConfigError("[model] needs either 'preset' or 'hamiltonian'")
    h = _complex_array("model", "hamiltonian", table, 2)
    ops = _complex_array("model", "jump_ops", table, 3) if table.get("jump_ops") else np.zeros((0,) + h.shape)
    try:
        return LindbladModel(h, tuple(ops)), None
    except (DimensionError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_initial(table: dict, dim: int, preset: str | None) -> InitialMixture:
    _check_keys("initial", table, ["basis", "amplitudes", "amplitudes_imag", "probabilities", "basis_states"])
    try:
        if "probabilities" in table:
            if "basis_states" not in table:
                raise ConfigError("[initial] probabilities needs basis_states")
            ks = [_number("initial", "basis_states", k, int) for k in table["basis_states"]]
            return InitialMixture(tuple(table["probabilities"]), tuple(basis_state(dim, k) for k in ks))
        if "amplitudes" in table:
            amp = _complex_array("initial", "amplitudes", table, 1)
            if amp.shape[0] != dim:
                raise ConfigError(f"[initial] amplitudes has length {amp.shape[0]}, model dimension is {dim}")
            return InitialMixture.pure(normalize(amp))
        if "basis" in table:
            return InitialMixture.pure(basis_state(dim, _number("initial", "basis", table["basis"], int)))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[initial] {exc}") from None
    if preset is None:
        raise ConfigError("[initial] is required for explicit models")
    return InitialMixture.pure(basis_state(dim, PRESET_GROUND[preset]))


def named_observable(name: str, dim: int) -> np.ndarray:
    """``population:k`` / ``projector:k`` (|k><k|), ``number`` (diag 0..N-1),
    ``re_coherence:i,j`` and ``im_coherence:i,j`` (Hermitian parts of |j><i|)."""
    head, _, arg = name.partition(":")
    try:
        if head in ("population", "projector"):
            k = int(arg)
            if not 0 <= k < dim:
                raise ConfigError(f"observable {name!r}: index out of range for dimension {dim}")
            op = np.zeros((dim, dim), dtype=np.complex128)
            op[k, k] = 1.0
            return op
        if head == "number" and not arg:
            return np.diag(np.arange(dim)).astype(np.complex128)
        if head in ("re_coherence", "im_coherence"):
            i, j = (int(x) for x in arg.split(","))
            if not (0 <= i < dim and 0 <= j < dim) or i == j:
                raise ConfigError(f"observable {name!r}: need two distinct indices below {dim}")
            ket_bra = np.zeros((dim, dim), dtype=np.complex128)
            ket_bra[j, i] = 1.0  # Tr(rho |j><i|) = rho_ij
            if head == "re_coherence":
                return 0.5 * (ket_bra + ket_bra.conj().T)
            return -0.5j * (ket_bra - ket_bra.conj().T)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"cannot parse observable {name!r}") from None
    raise ConfigError(f"unknown observable {name!r}")


def _parse_observables(table: dict, dim: int) -> tuple[list[np.ndarray], list[str]]:
    _check_keys("observables", table, ["names", "matrices", "matrices_imag", "labels"])
    names = table.get("names", [])
    ops = [named_observable(str(n), dim) for n in names]
    labels = [str(n) for n in names]
    if table.get("matrices"):
        mats = _complex_array("observables", "matrices", table, 3)
        if mats.shape[1:] != (dim, dim):
            raise ConfigError(f"[observables] matrices have shape {mats.shape[1:]}, model dimension is {dim}")
        extra = table.get("labels", [f"matrix_{i}" for i in range(mats.shape[0])])
        if len(extra) != mats.shape[0]:
            raise ConfigError("[observables] labels must match the number of matrices")
        ops.extend(mats)
        labels.extend(str(x) for x in extra)
    if not ops:
        raise ConfigError("[observables] lists no observables")
    if len(set(labels)) != len(labels):
        raise ConfigError("[observables] labels must be unique")
    return ops, labels


def _dataclass_from(cls, section: str, table: dict, casts: dict):
    _check_keys(section, table, [f.name for f in fields(cls)])
    kwargs = {}
    for k, v in table.items():
        cast = casts.get(k)
        if cast in (int, float):
            v = _number(section, k, v, cast)
        elif not isinstance(v, cast):
            raise ConfigError(f"[{section}] {k} must be of type {cast.__name__}, got {v!r}")
        kwargs[k] = v
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> RunConfig:
    """Validate an already-parsed configuration (e.g. the echo stored in a manifest)."""
    _check_keys("top level", raw, _SECTIONS)
    for s in _SECTIONS:
        if s in raw and not isinstance(raw[s], dict):
            raise ConfigError(f"[{s}] must be a table")
    for s in ("model", "grid"):
        if s not in raw:
            raise ConfigError(f"missing required section [{s}]")
    model, preset = _parse_model(raw["model"])

    engine = _dataclass_from(EngineConfig, "engine", raw.get("engine", {}), {"mu": float, "delta_p_max": float, "method": str, "scheme": str})
    if engine.method not in ALL_ENGINES:
        raise ConfigError(f"unknown engine {engine.method!r}; expected one of {', '.join(ALL_ENGINES)}")
    if engine.method == "finite_mu" and engine.mu is None:
        raise ConfigError("engine finite_mu requires key 'mu' in [engine]")
    if engine.method != "finite_mu" and engine.mu is not None:
        raise ConfigError("key 'mu' in [engine] is only valid for finite_mu")
    if engine.scheme not in HOMODYNE_SCHEMES:
        raise ConfigError(f"unknown scheme {engine.scheme!r}")
    if not 0 < engine.delta_p_max < 1:
        raise ConfigError("delta_p_max must lie in (0, 1)")

    g = raw["grid"]
    _check_keys("grid", g, ["t_start", "t_end", "dt", "sample_every"])
    for k in ("t_end", "dt"):
        if k not in g:
            raise ConfigError(f"missing required key '{k}' in [grid]")
    try:
        grid = TimeGrid(
            _number("grid", "t_start", g.get("t_start", 0.0)),
            _number("grid", "t_end", g["t_end"]),
            _number("grid", "dt", g["dt"]),
            _number("grid", "sample_every", g.get("sample_every", 1), int),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[grid] {exc}") from None

    ens = _dataclass_from(EnsembleConfig, "ensemble", raw.get("ensemble", {}), {"n_traj": int, "master_seed": int, "block_size": int})
    if ens.n_traj < 1:
        raise ConfigError("n_traj must be at least 1")
    if ens.block_size < 1:
        raise ConfigError("block_size must be positive")
    if not 0 <= ens.master_seed < 2**64:
        raise ConfigError("master_seed must be a 64-bit unsigned integer")

    initial = _parse_initial(raw.get("initial", {}), model.dim, preset)
    if "observables" not in raw:
        raise ConfigError("missing required section [observables]")
    ops, labels = _parse_observables(raw["observables"], model.dim)
    output = _dataclass_from(OutputConfig, "output", raw.get("output", {}), {"dir": str, "prefix": str, "events": bool})
    return RunConfig(model, preset, grid, engine, ens, initial, ops, labels, output, raw)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    raw = {**cfg.raw, "ensemble": {**cfg.raw.get("ensemble", {}), "master_seed": seed}}
    ens = EnsembleConfig(cfg.ensemble.n_traj, seed, cfg.ensemble.block_size)
    return RunConfig(cfg.model, cfg.preset, cfg.grid, cfg.engine, ens, cfg.initial, cfg.observables, cfg.labels, cfg.output, raw)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
