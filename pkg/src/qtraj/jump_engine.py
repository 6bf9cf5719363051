"""Monte-Carlo wave-function propagation with quantum jumps.

Three step methods are available:

``euler_order1``
    no-jump evolution with ``1 - i H dt``, jump decision from
    ``dp_m = dt <phi|C_m^dagger C_m|phi>``;
``rk4_nonhermitian``
    same decision rule, no-jump evolution by RK4 on ``d phi/dt = -i H phi``;
``waiting_time``
    one uniform ``r`` per jump; the unnormalized no-jump state is
    propagated until its squared norm drops below ``r`` and the crossing is
    located by bisection.

All engines work on column-stacked batches (shape ``(N, B)``). Per-column
arithmetic does not depend on ``B`` and every column draws from its own
counter-based stream, so results are bit-identical however trajectories are
grouped into batches or workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .grid import TimeGrid
from .quantum_core import (
    BatchOperator,
    LindbladModel,
    check_state,
    normalize_cols,
    sqnorm_cols,
    stability_bound,
    vdot_cols,
)
from .rng import Streams, trajectory_stream

DELTA_P_MAX = 0.1
RK4_GUARD = 0.5
ZERO_NORM = 1e-14
BISECTION_REL_TOL = 1e-3
NORM_GROWTH_TOL = 1e-10


class StepMethod(str, Enum):
    EULER = "euler_order1"
    RK4 = "rk4_nonhermitian"
    WAITING_TIME = "waiting_time"


class StepSizeError(ValueError):
    """The time step is too large for the requested method."""

    def __init__(self, message: str, measured: float | None = None, limit: float | None = None):
        super().__init__(message)
        self.measured = measured
        self.limit = limit


class ZeroNormJumpError(RuntimeError):
    """A channel was selected although C_m|phi> is numerically zero."""


class NormIncreaseError(RuntimeError):
    """The no-jump evolution increased the norm; the model or dt is invalid."""


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    values: np.ndarray  # (n_times, n_observables)
    jumps: list[JumpEvent]
    final_state: np.ndarray
    traj_index: int = 0
    master_seed: int = 0
    dt: float = float("nan")

    @property
    def jump_times(self) -> np.ndarray:
        return np.array([j.time for j in self.jumps], dtype=float)

    @property
    def jump_channels(self) -> np.ndarray:
        return np.array([j.channel for j in self.jumps], dtype=np.int64)


@dataclass
class BatchResult:
    """Raw output of a vectorized run; jump arrays are sorted by row, then time."""

    times: np.ndarray
    values: np.ndarray  # (B, n_times, n_observables)
    final: np.ndarray  # (B, N), normalized
    jump_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    jump_time: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jump_channel: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    states: np.ndarray | None = None  # (B, n_times, N) when requested
    dt: float = float("nan")
    density_sum: np.ndarray | None = None  # (n_times, N, N) sum of projectors when requested

    def record(self, row: int, traj_index: int = 0, master_seed: int = 0) -> TrajectoryRecord:
        sel = self.jump_row == row
        jumps = [JumpEvent(float(t), int(c)) for t, c in zip(self.jump_time[sel], self.jump_channel[sel])]
        return TrajectoryRecord(
            self.times, self.values[row], jumps, self.final[row].copy(), traj_index, master_seed, self.dt
        )


# -- kernels -------------------------------------------------------------------

def rk4_propagator(heff: np.ndarray, h: float) -> np.ndarray:
    """RK4 update matrix for d phi/dt = -i H phi, i.e. sum_{k<=4} (-i H h)^k / k!."""
    a = -1j * h * heff
    out = np.eye(heff.shape[0], dtype=np.complex128)
    term = out
    for k in range(1, 5):
        term = term @ a / k
        out = out + term
    return out


def euler_propagator(heff: np.ndarray, h: float) -> np.ndarray:
    return np.eye(heff.shape[0], dtype=np.complex128) - 1j * h * heff


def rk4_cols(heff: BatchOperator, psi: np.ndarray, h: np.ndarray) -> np.ndarray:
    """RK4 with a separate step ``h[b]`` for every column (stage form)."""
    k1 = -1j * heff(psi)
    k2 = -1j * heff(psi + (0.5 * h) * k1)
    k3 = -1j * heff(psi + (0.5 * h) * k2)
    k4 = -1j * heff(psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Images:
    """[first; C_1; ...; C_M] applied in one pass, split into (M+1, N, B)."""

    def __init__(self, first: np.ndarray | None, model: LindbladModel):
        blocks = ([first] if first is not None else []) + list(model.jump_ops)
        self.n = model.dim
        self.op = BatchOperator(np.concatenate(blocks, axis=0))

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        out = self.op(psi)
        return out.reshape(-1, self.n, psi.shape[1])


def _weights(cpsi: np.ndarray) -> np.ndarray:
    """||C_m psi||^2 as (M, B) from images of shape (M, N, B)."""
    return sqnorm_cols(np.moveaxis(cpsi, 1, 0))


def _cumulative(w: np.ndarray) -> np.ndarray:
    """Running sums over the channel axis, added in channel order."""
    cum = np.empty_like(w)
    acc = w[0]
    cum[0] = acc
    for m in range(1, w.shape[0]):
        acc = acc + w[m]
        cum[m] = acc
    return cum


def _first_exceeding(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Smallest channel index whose cumulative weight exceeds u (per column)."""
    return np.argmax(cum > u[None, :], axis=0)


def _pick_jump(cpsi: np.ndarray, cols: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """Normalized C_m psi for the given columns, each with its own channel; shape (N, r)."""
    picked = cpsi[channel, :, cols].T
    n2 = sqnorm_cols(picked)
    if n2.size and n2.min() < ZERO_NORM**2:
        raise ZeroNormJumpError("selected jump channel has zero norm on the current state")
    return picked / np.sqrt(n2)


def jump_probabilities(model: LindbladModel, phi: np.ndarray, dt: float) -> np.ndarray:
    """dp_m = dt <phi|C_m^dagger C_m|phi> for every channel."""
    phi = check_state(phi, model.dim)
    if model.n_channels == 0:
        return np.zeros(0)
    cpsi = _Images(None, model)(phi[:, None])
    return dt * _weights(cpsi)[:, 0]


def _check_dp(total_dp: np.ndarray, limit: float) -> None:
    if total_dp.size and total_dp.max() > limit:
        worst = float(total_dp.max())
        raise StepSizeError(
            f"jump probability per step dp = {worst:.4g} exceeds delta_p_max = {limit:g}; reduce dt",
            measured=worst,
            limit=limit,
        )


def _jump_step(images: _Images, psi, dt, u, delta_p_max):
    """One decision step for every column; returns (new psi, channel or -1)."""
    channel = np.full(psi.shape[1], -1, dtype=np.int64)
    imgs = images(psi)
    new = normalize_cols(imgs[0])
    if imgs.shape[0] == 1:
        return new, channel
    cpsi = imgs[1:]
    cum = _cumulative(dt * _weights(cpsi))
    _check_dp(cum[-1], delta_p_max)
    cols = np.nonzero(u < cum[-1])[0]
    if cols.size:
        ch = _first_exceeding(cum[:, cols], u[cols])
        channel[cols] = ch
        new[:, cols] = _pick_jump(cpsi, cols, ch)
    return new, channel


def mcwf_step(
    model: LindbladModel,
    phi: np.ndarray,
    dt: float,
    method: StepMethod | str = StepMethod.EULER,
    rng=None,
    delta_p_max: float = DELTA_P_MAX,
    t: float = 0.0,
) -> tuple[np.ndarray, JumpEvent | None]:
    """Advance one normalized state by ``dt``.

    ``rng`` needs a ``random()`` method (a :class:`Streams` or a numpy
    Generator). A single uniform ``u`` decides both whether a jump happens
    (``u < dp``) and which channel: the first whose cumulative probability
    exceeds ``u``. Jumps are stamped at ``t + dt``.
    """
    method = StepMethod(method)
    if method is StepMethod.WAITING_TIME:
        raise ValueError("waiting_time is a trajectory-level method; use waiting_time_trajectory")
    phi = check_state(phi, model.dim)
    if rng is None:
        rng = trajectory_stream(0, 0)
    u = np.array([float(np.ravel(rng.random())[0])])
    prop = euler_propagator(model.heff, dt) if method is StepMethod.EULER else rk4_propagator(model.heff, dt)
    new, ch = _jump_step(_Images(prop, model), phi[:, None], dt, u, delta_p_max)
    event = JumpEvent(t + dt, int(ch[0])) if ch[0] >= 0 else None
    return new[:, 0], event


# -- batch drivers ---------------------------------------------------------------

def check_observables(model: LindbladModel, observables: Sequence[np.ndarray]) -> list[BatchOperator]:
    ops = []
    for a in observables:
        a = np.asarray(a, dtype=np.complex128)
        if a.shape != (model.dim, model.dim):
            raise ValueError(f"observable shape {a.shape} does not match model dimension {model.dim}")
        ops.append(BatchOperator(a))
    return ops


def initial_columns(model: LindbladModel, psi0: np.ndarray, n: int) -> np.ndarray:
    """(N, n) array of normalized starting states from one state or one per row."""
    psi0 = np.array(psi0, dtype=np.complex128)
    if psi0.ndim == 1:
        psi0 = np.repeat(psi0[None, :], n, axis=0)
    if psi0.shape != (n, model.dim):
        raise ValueError(f"initial states have shape {psi0.shape}, expected ({n}, {model.dim})")
    cols = np.ascontiguousarray(psi0.T)
    if np.max(np.abs(sqnorm_cols(cols) - 1.0)) > 1e-10:
        raise ValueError("initial state is not normalized")
    return cols


class Recorder:
    """Observable values at the grid's sample steps, plus optional states or density sums."""

    def __init__(
        self,
        grid: TimeGrid,
        n_cols: int,
        observables: list[BatchOperator],
        dim: int,
        keep_states: bool,
        keep_density: bool = False,
    ):
        self.steps = grid.sample_steps
        self.obs = observables
        self.values = np.empty((n_cols, self.steps.size, len(observables)))
        self.states = np.empty((n_cols, self.steps.size, dim), dtype=np.complex128) if keep_states else None
        self.density = np.empty((self.steps.size, dim, dim), dtype=np.complex128) if keep_density else None
        self.slot = 0

    def due(self, k: int) -> bool:
        return self.slot < self.steps.size and k == self.steps[self.slot]

    def take(self, psi: np.ndarray) -> None:
        for j, a in enumerate(self.obs):
            self.values[:, self.slot, j] = vdot_cols(psi, a(psi)).real
        if self.states is not None:
            self.states[:, self.slot] = psi.T
        if self.density is not None:
            self.density[self.slot] = outer_sum(psi)
        self.slot += 1


def outer_sum(psi: np.ndarray) -> np.ndarray:
    """sum_b |psi_b><psi_b| for column-stacked states, one row at a time to bound memory."""
    conj = np.conj(psi)
    out = np.empty((psi.shape[0], psi.shape[0]), dtype=np.complex128)
    for i in range(psi.shape[0]):
        out[i] = np.sum(psi[i][None, :] * conj, axis=1)
    return out


def sorted_jumps(cols: list, times: list, chans: list):
    if not cols:
        return np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64)
    r = np.concatenate(cols)
    t = np.concatenate(times)
    c = np.concatenate(chans)
    order = np.argsort(r, kind="stable")
    return r[order], t[order], c[order]


def propagate_jumps(
    model: LindbladModel,
    psi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray],
    method: StepMethod | str,
    streams: Streams,
    delta_p_max: float = DELTA_P_MAX,
    keep_states: bool = False,
    keep_density: bool = False,
) -> BatchResult:
    """Run one trajectory per stream; ``psi0`` is one state or one per stream (rows)."""
    method = StepMethod(method)
    psi = initial_columns(model, psi0, len(streams))
    obs = check_observables(model, observables)
    eta = stability_bound(model)
    if method is not StepMethod.EULER and grid.dt * eta > RK4_GUARD:
        raise StepSizeError(
            f"dt * stability_bound = {grid.dt * eta:.4g} exceeds {RK4_GUARD} for {method.value}",
            measured=grid.dt * eta,
            limit=RK4_GUARD,
        )
    if method is StepMethod.WAITING_TIME:
        return _propagate_waiting(model, psi, grid, obs, streams, delta_p_max, keep_states, keep_density)

    if method is StepMethod.EULER:
        prop = euler_propagator(model.heff, grid.dt)
    else:
        prop = rk4_propagator(model.heff, grid.dt)
    images = _Images(prop, model)
    rec = Recorder(grid, psi.shape[1], obs, model.dim, keep_states, keep_density)
    cols_l, times_l, chans_l = [], [], []
    for k in range(grid.n_steps + 1):
        if rec.due(k):
            rec.take(psi)
        if k == grid.n_steps:
            break
        u = streams.random() if model.n_channels else None
        psi, ch = _jump_step(images, psi, grid.dt, u, delta_p_max)
        hit = np.nonzero(ch >= 0)[0]
        if hit.size:
            cols_l.append(hit)
            times_l.append(np.full(hit.size, grid.step_time(k + 1)))
            chans_l.append(ch[hit])
    r, t, c = sorted_jumps(cols_l, times_l, chans_l)
    return BatchResult(grid.times, rec.values, psi.T.copy(), r, t, c, rec.states, grid.dt, rec.density)


def _propagate_waiting(model, psi, grid, obs, streams, delta_p_max, keep_states, keep_density) -> BatchResult:
    heff = BatchOperator(model.heff)
    dt = grid.dt
    images = _Images(rk4_propagator(model.heff, dt), model)
    jump_images = _Images(None, model) if model.n_channels else None
    n_bisect = math.ceil(math.log2(1.0 / BISECTION_REL_TOL))
    grow = (1.0 + NORM_GROWTH_TOL) ** 2
    b = psi.shape[1]
    threshold = streams.random() if model.n_channels else np.zeros(b)
    rec = Recorder(grid, b, obs, model.dim, keep_states, keep_density)
    cols_l, times_l, chans_l = [], [], []

    for k in range(grid.n_steps + 1):
        if rec.due(k):
            rec.take(normalize_cols(psi))
        if k == grid.n_steps:
            break
        imgs = images(psi)
        nxt = imgs[0]
        n_old = sqnorm_cols(psi)
        if model.n_channels:
            _check_dp(dt * _cumulative(_weights(imgs[1:]))[-1] / n_old, delta_p_max)
        n_new = sqnorm_cols(nxt)
        if np.any(n_new > n_old * grow):
            raise NormIncreaseError("norm increased during non-Hermitian evolution; check the model or reduce dt")
        # columns whose squared norm fell below their threshold inside this step
        active = np.nonzero(n_new < threshold)[0]
        t0 = grid.step_time(k)
        start = np.zeros(active.size)
        cur = psi[:, active]
        while active.size:
            lo = np.zeros(active.size)
            hi = dt - start
            r = threshold[active]
            for _ in range(n_bisect):
                mid = 0.5 * (lo + hi)
                below = sqnorm_cols(rk4_cols(heff, cur, mid)) < r
                hi = np.where(below, mid, hi)
                lo = np.where(below, lo, mid)
            at_cross = rk4_cols(heff, cur, hi)
            cpsi = jump_images(at_cross)
            cum = _cumulative(_weights(cpsi))
            total = cum[-1]
            if np.any(total < ZERO_NORM**2):
                raise ZeroNormJumpError("norm decayed below threshold but no channel has weight")
            ch = _first_exceeding(cum, streams.random(active) * total)
            jumped = _pick_jump(cpsi, np.arange(active.size), ch)
            cols_l.append(active.copy())
            times_l.append(t0 + start + hi)
            chans_l.append(ch)
            threshold[active] = streams.random(active)
            start = start + hi
            rest = rk4_cols(heff, jumped, dt - start)
            again = sqnorm_cols(rest) < threshold[active]
            done = ~again
            nxt[:, active[done]] = rest[:, done]
            active, start, cur = active[again], start[again], jumped[:, again]
        psi = nxt
    r, t, c = sorted_jumps(cols_l, times_l, chans_l)
    return BatchResult(grid.times, rec.values, normalize_cols(psi).T.copy(), r, t, c, rec.states, grid.dt, rec.density)


# -- single-trajectory API -----------------------------------------------------------

def run_trajectory(
    model: LindbladModel,
    phi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray] = (),
    method: StepMethod | str = StepMethod.EULER,
    rng: Streams | None = None,
    master_seed: int = 0,
    traj_index: int = 0,
    delta_p_max: float = DELTA_P_MAX,
) -> TrajectoryRecord:
    """One stochastic realization sampled on ``grid``.

    Without ``rng`` the stream ``(master_seed, traj_index)`` is used, which is
    the same stream that trajectory gets inside an ensemble.
    """
    phi0 = check_state(phi0, model.dim)
    if rng is None:
        rng = trajectory_stream(master_seed, traj_index)
    res = propagate_jumps(model, phi0, grid, observables, method, rng, delta_p_max)
    return res.record(0, traj_index, master_seed)


def waiting_time_trajectory(
    model: LindbladModel,
    phi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray] = (),
    rng: Streams | None = None,
    master_seed: int = 0,
    traj_index: int = 0,
    delta_p_max: float = DELTA_P_MAX,
) -> TrajectoryRecord:
    """Trajectory driven by one uniform threshold per jump on the decaying norm."""
    return run_trajectory(
        model, phi0, grid, observables, StepMethod.WAITING_TIME, rng, master_seed, traj_index, delta_p_max
    )
