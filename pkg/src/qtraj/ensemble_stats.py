"""Ensembles of trajectories: initial-state sampling, streaming moments, parallel runs.

Trajectories are processed in fixed-size blocks. A block's partial result
depends only on the trajectory indices it holds, and partials are merged by
a pairwise tree in block order, so the final numbers do not depend on how
many workers ran the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffusion_engine import DiffusionMethod, propagate_diffusion, propagate_finite_mu
from .grid import TimeGrid
from .jump_engine import DELTA_P_MAX, BatchResult, StepMethod, propagate_jumps
from .quantum_core import LindbladModel, check_state
from .rng import LANE_DYNAMICS, LANE_INITIAL, Streams

DEFAULT_BLOCK = 2048
ENGINES = tuple(m.value for m in StepMethod) + tuple(m.value for m in DiffusionMethod)


# -- initial states ----------------------------------------------------------------

@dataclass(frozen=True)
class InitialMixture:
    """Statistical mixture sum_i p_i |chi_i><chi_i| of normalized pure states."""

    probabilities: tuple[float, ...]
    states: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("mixture has no components")
        if len(self.probabilities) != len(self.states):
            raise ValueError("probabilities and states differ in length")
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < 0):
            raise ValueError("mixture probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixture probabilities sum to {p.sum()!r}, expected 1")
        states = tuple(check_state(s) for s in self.states)
        if len({s.shape[0] for s in states}) != 1:
            raise ValueError("mixture states have different dimensions")
        object.__setattr__(self, "probabilities", tuple(float(x) for x in p))
        object.__setattr__(self, "states", states)

    @classmethod
    def pure(cls, phi) -> "InitialMixture":
        return cls((1.0,), (np.asarray(phi, dtype=np.complex128),))

    @classmethod
    def from_density(cls, rho, cutoff: float = 1e-12) -> "InitialMixture":
        """Eigen-decomposition of a density matrix, dropping weights below ``cutoff``."""
        w, v = np.linalg.eigh(np.asarray(rho, dtype=np.complex128))
        keep = w > cutoff
        p = w[keep] / w[keep].sum()
        return cls(tuple(p), tuple(v[:, i] for i in np.nonzero(keep)[0]))

    @property
    def dim(self) -> int:
        return self.states[0].shape[0]

    def density(self) -> np.ndarray:
        return sum(p * np.outer(s, s.conj()) for p, s in zip(self.probabilities, self.states))

    def pick(self, u: np.ndarray) -> np.ndarray:
        """Component index for each uniform: the first whose cumulative probability exceeds u."""
        p = np.asarray(self.probabilities)
        cum = np.cumsum(p)
        idx = np.searchsorted(cum, np.asarray(u), side="right")
        # rounding can leave cum[-1] slightly below 1; fall back to the last live component
        last = int(np.nonzero(p > 0)[0][-1])
        return np.minimum(idx, last)


def sample_initial(mixture: InitialMixture, rng) -> np.ndarray:
    """Draw one component state; ``rng`` needs a ``random()`` method."""
    u = float(np.ravel(rng.random())[0])
    return mixture.states[int(mixture.pick(np.array([u]))[0])].copy()


def initial_states(mixture: InitialMixture, master_seed: int, indices: np.ndarray) -> np.ndarray:
    """Starting states (rows) for the given trajectory indices, from the initial-state lane."""
    if len(mixture.states) == 1:
        return np.repeat(mixture.states[0][None, :], len(indices), axis=0)
    u = Streams(master_seed, indices, LANE_INITIAL).random()
    return np.stack(mixture.states)[mixture.pick(u)]


def as_mixture(initial) -> InitialMixture:
    if isinstance(initial, InitialMixture):
        return initial
    return InitialMixture.pure(initial)


# -- streaming moments ---------------------------------------------------------------

@dataclass
class Moments:
    """Count, mean and sum of squared deviations, mergeable without the raw samples."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "Moments":
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=0)
        return cls(x.shape[0], mean, ((x - mean) ** 2).sum(axis=0))

    def merge(self, other: "Moments") -> "Moments":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.count)


def tree_merge(items: Sequence, merge=lambda a, b: a.merge(b)):
    """Pairwise reduction in index order: ((0,1),(2,3)),... ."""
    items = list(items)
    if not items:
        raise ValueError("nothing to merge")
    while len(items) > 1:
        nxt = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


@dataclass
class BlockPartial:
    """Everything an ensemble keeps from one block of trajectories."""

    moments: Moments
    jump_counts: np.ndarray  # (n_channels,)
    density_sum: np.ndarray | None = None
    jump_traj: np.ndarray | None = None
    jump_time: np.ndarray | None = None
    jump_channel: np.ndarray | None = None

    def merge(self, other: "BlockPartial") -> "BlockPartial":
        def cat(a, b):
            return None if a is None else np.concatenate([a, b])

        return BlockPartial(
            self.moments.merge(other.moments),
            self.jump_counts + other.jump_counts,
            None if self.density_sum is None else self.density_sum + other.density_sum,
            cat(self.jump_traj, other.jump_traj),
            cat(self.jump_time, other.jump_time),
            cat(self.jump_channel, other.jump_channel),
        )


@dataclass
class JumpLog:
    traj: np.ndarray
    time: np.ndarray
    channel: np.ndarray

    def __len__(self) -> int:
        return self.traj.shape[0]


@dataclass
class EnsembleResult:
    """Sample means and standard errors of every observable at every sample time."""

    times: np.ndarray
    mean: np.ndarray  # (n_times, n_observables)
    stderr: np.ndarray  # (n_times, n_observables), NaN when n_traj == 1
    n_traj: int
    jump_rate_per_channel: np.ndarray
    jumps: JumpLog | None = None
    density: np.ndarray | None = None  # (n_times, N, N) when requested
    settings: dict = field(default_factory=dict)


# -- execution -----------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Picklable description of the per-block work."""

    model: LindbladModel
    mixture: InitialMixture
    grid: TimeGrid
    observables: tuple[np.ndarray, ...]
    engine: str
    master_seed: int
    mu: float | None = None
    scheme: str = "two_phase"
    delta_p_max: float = DELTA_P_MAX
    keep_jumps: bool = False
    density: bool = False

    @property
    def n_channels(self) -> int:
        m = self.model.n_channels
        if self.engine == DiffusionMethod.FINITE_MU.value:
            return m * (2 if self.scheme == "two_phase" else 4)
        return m


def _propagate(spec: EnsembleSpec, indices: np.ndarray) -> BatchResult:
    psi0 = initial_states(spec.mixture, spec.master_seed, indices)
    streams = Streams(spec.master_seed, indices, LANE_DYNAMICS)
    args = (spec.model, psi0, spec.grid, spec.observables)
    if spec.engine in {m.value for m in StepMethod}:
        return propagate_jumps(*args, spec.engine, streams, spec.delta_p_max, keep_density=spec.density)
    if spec.engine == DiffusionMethod.FINITE_MU.value:
        return propagate_finite_mu(
            *args, spec.mu, spec.scheme, streams, spec.delta_p_max, keep_density=spec.density
        )
    return propagate_diffusion(*args, spec.engine, streams, keep_density=spec.density)


def run_block(spec: EnsembleSpec, start: int, stop: int) -> BlockPartial:
    indices = np.arange(start, stop, dtype=np.int64)
    res = _propagate(spec, indices)
    counts = np.bincount(res.jump_channel, minlength=spec.n_channels).astype(np.int64)
    part = BlockPartial(Moments.from_samples(res.values), counts, res.density_sum)
    if spec.keep_jumps:
        part.jump_traj = indices[res.jump_row]
        part.jump_time = res.jump_time
        part.jump_channel = res.jump_channel
    return part


def _run_chunk(spec: EnsembleSpec, bounds: list[tuple[int, int]]) -> list[BlockPartial]:
    return [run_block(spec, a, b) for a, b in bounds]


def block_bounds(n_traj: int, block_size: int) -> list[tuple[int, int]]:
    return [(a, min(a + block_size, n_traj)) for a in range(0, n_traj, block_size)]


def default_workers() -> int:
    return os.cpu_count() or 1


def run_ensemble(
    model: LindbladModel,
    initial,
    grid: TimeGrid,
    observables: Sequence[np.ndarray],
    engine: str = "euler_order1",
    n_traj: int = 100,
    master_seed: int = 0,
    *,
    mu: float | None = None,
    scheme: str = "two_phase",
    delta_p_max: float = DELTA_P_MAX,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK,
    keep_jumps: bool = False,
    density: bool = False,
) -> EnsembleResult:
    """Average ``n_traj`` trajectories; trajectory i uses stream (master_seed, i).

    ``initial`` is a state vector or an :class:`InitialMixture`. Results are
    bit-identical for any ``workers`` at fixed ``block_size``.
    """
    engine = str(getattr(engine, "value", engine))
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {', '.join(ENGINES)}")
    if engine == DiffusionMethod.FINITE_MU.value and mu is None:
        raise ValueError("engine finite_mu requires mu")
    if n_traj < 1:
        raise ValueError(f"n_traj must be at least 1, got {n_traj}")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    mixture = as_mixture(initial)
    if mixture.dim != model.dim:
        raise ValueError(f"initial state has dimension {mixture.dim}, model has {model.dim}")
    spec = EnsembleSpec(
        model, mixture, grid, tuple(np.asarray(a, dtype=np.complex128) for a in observables),
        engine, int(master_seed), mu, scheme, delta_p_max, keep_jumps, density,
    )
    bounds = block_bounds(n_traj, block_size)
    workers = max(1, min(int(workers), len(bounds)))
    if workers == 1:
        partials = _run_chunk(spec, bounds)
    else:
        # contiguous static partition of blocks; each worker returns its partials in order
        chunks = [list(c) for c in np.array_split(np.arange(len(bounds)), workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, spec, [bounds[i] for i in c]) for c in chunks]
            partials = [p for f in futures for p in f.result()]
    total = tree_merge(partials)
    span = grid.t_end - grid.t_start
    jumps = None
    if keep_jumps:
        order = np.lexsort((total.jump_time, total.jump_traj))
        jumps = JumpLog(total.jump_traj[order], total.jump_time[order], total.jump_channel[order])
    return EnsembleResult(
        times=grid.times,
        mean=total.moments.mean,
        stderr=total.moments.stderr,
        n_traj=n_traj,
        jump_rate_per_channel=total.jump_counts / (n_traj * span),
        jumps=jumps,
        density=None if total.density_sum is None else total.density_sum / n_traj,
        settings={
            "engine": engine,
            "master_seed": int(master_seed),
            "block_size": block_size,
            "mu": mu,
            "scheme": scheme,
            "delta_p_max": delta_p_max,
        },
    )


def mean_density(
    model: LindbladModel,
    initial,
    grid: TimeGrid,
    engine: str = "euler_order1",
    n_traj: int = 100,
    master_seed: int = 0,
    sample_times: Sequence[float] | None = None,
    **kwargs,
) -> np.ndarray:
    """Average of |phi><phi| over the ensemble, shape (n_times, N, N).

    ``sample_times`` must be a subset of the grid's sample times.
    """
    res = run_ensemble(model, initial, grid, (), engine, n_traj, master_seed, density=True, **kwargs)
    if sample_times is None:
        return res.density
    picks = []
    for t in sample_times:
        hit = np.nonzero(np.isclose(res.times, t, rtol=0, atol=1e-9 * max(1.0, abs(t))))[0]
        if hit.size == 0:
            raise ValueError(f"time {t} is not a sample time of the grid")
        picks.append(hit[0])
    return res.density[picks]
