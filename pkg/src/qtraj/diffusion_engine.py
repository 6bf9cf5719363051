"""Diffusive unravelings: Ito state diffusion and finite-reference homodyne jumps.

Two continuous equations are integrated with Euler-Maruyama and renormalized
after every step:

``ito_complex``
    complex Wiener increments per channel, Re and Im each of variance dt;
``ito_real``
    one real Wiener increment per channel (homodyne-type diffusion).

``finite_mu`` replaces every channel by reference-field mixtures
``(mu + eps C)/d`` and runs the ordinary jump engine on them; as mu grows the
jumps become small and frequent and the record approaches a diffusion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .grid import TimeGrid
from .jump_engine import (
    DELTA_P_MAX,
    BatchResult,
    Recorder,
    StepMethod,
    StepSizeError,
    TrajectoryRecord,
    check_observables,
    initial_columns,
    propagate_jumps,
)
from .quantum_core import (
    HOMODYNE_SCHEMES,
    BatchOperator,
    DimensionError,
    LindbladModel,
    check_state,
    homodyne_channels,
    normalize_cols,
    stability_bound,
    vdot_cols,
)
from .rng import Streams, trajectory_stream

#: dt * stability_bound allowed for the diffusion integrators
DIFFUSION_GUARD = 0.01
#: finite_mu needs dt <= FINITE_MU_DT / mu**2
FINITE_MU_DT = 0.05
#: finite_mu warns when mu**2 < FINITE_MU_RATIO * stability_bound
FINITE_MU_RATIO = 100.0


class DiffusionMethod(str, Enum):
    ITO_COMPLEX = "ito_complex"
    ITO_REAL = "ito_real"
    FINITE_MU = "finite_mu"


class _Stack:
    """[H_S; C_1..C_M; C_1^dag C_1..C_M^dag C_M] applied in one pass."""

    def __init__(self, model: LindbladModel):
        self.n = model.dim
        self.m = model.n_channels
        blocks = [model.hamiltonian, *model.jump_ops, *model.decay_ops]
        self.op = BatchOperator(np.concatenate(blocks, axis=0))

    def __call__(self, psi):
        imgs = self.op(psi).reshape(-1, self.n, psi.shape[1])
        return imgs[0], imgs[1 : 1 + self.m], imgs[1 + self.m :]


def _drift_noise(stack: _Stack, psi, dt, method, noise):
    """Unnormalized Euler-Maruyama update; ``noise`` is (M, B), already scaled by sqrt(dt)."""
    hs, cpsi, dpsi = stack(psi)
    out = psi - (1j * dt) * hs
    for m in range(stack.m):
        c = cpsi[m]
        mean_c = vdot_cols(psi, c)
        if method is DiffusionMethod.ITO_COMPLEX:
            drift = np.conj(mean_c) * c - 0.5 * dpsi[m] - (0.5 * (mean_c.real**2 + mean_c.imag**2)) * psi
            kick = (c - mean_c * psi) * (noise[m] / math.sqrt(2.0))
        else:
            x = 2.0 * mean_c.real  # <C + C^dagger>
            drift = 0.5 * (x * c - dpsi[m] - (0.25 * x * x) * psi)
            kick = (c - (0.5 * x) * psi) * noise[m]
        out = out + dt * drift + kick
    return out


def draw_noise(streams: Streams, n_channels: int, dt: float, method, rows=None) -> np.ndarray:
    """Wiener increments of shape (M, B) for one step.

    Complex mode: Re and Im independent, each N(0, dt). Real mode: N(0, dt),
    using the cosine branch of Box-Muller so both modes consume 2M uniforms.
    """
    method = DiffusionMethod(method)
    g_re, g_im = streams.gaussian_pairs(rows, n_channels)
    scale = math.sqrt(dt)
    if method is DiffusionMethod.ITO_COMPLEX:
        return (scale * (g_re + 1j * g_im)).T
    return (scale * g_re).T


def _check_guard(model: LindbladModel, dt: float) -> None:
    eta = stability_bound(model)
    if dt * eta > DIFFUSION_GUARD:
        raise StepSizeError(
            f"dt * stability_bound = {dt * eta:.4g} exceeds {DIFFUSION_GUARD} for diffusion; reduce dt",
            measured=dt * eta,
            limit=DIFFUSION_GUARD,
        )


def _finite_or_raise(psi: np.ndarray) -> None:
    if not np.all(np.isfinite(psi)):
        raise FloatingPointError("non-finite amplitudes in diffusion step; dt is too large")


def _continuous(method) -> DiffusionMethod:
    method = DiffusionMethod(method)
    if method is DiffusionMethod.FINITE_MU:
        raise ValueError("finite_mu is a jump unraveling; use finite_mu_run")
    return method


def qsd_step(
    model: LindbladModel,
    phi: np.ndarray,
    dt: float,
    method: DiffusionMethod | str = DiffusionMethod.ITO_COMPLEX,
    rng: Streams | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """One Euler-Maruyama step followed by renormalization.

    ``noise`` overrides the random draw: per-channel increments (complex for
    ``ito_complex``, real for ``ito_real``) with variance dt per component.
    """
    method = _continuous(method)
    phi = check_state(phi, model.dim)
    _check_guard(model, dt)
    m = model.n_channels
    if noise is None:
        noise = draw_noise(rng if rng is not None else trajectory_stream(0, 0), m, dt, method)
    else:
        noise = np.asarray(noise).reshape(m, 1)
    new = _drift_noise(_Stack(model), phi[:, None], dt, method, noise)
    _finite_or_raise(new)
    return normalize_cols(new)[:, 0]


def propagate_diffusion(
    model: LindbladModel,
    psi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray],
    method: DiffusionMethod | str,
    streams: Streams,
    keep_states: bool = False,
    keep_density: bool = False,
) -> BatchResult:
    """Vectorized diffusion run, one column per stream; no jump events."""
    method = _continuous(method)
    _check_guard(model, grid.dt)
    psi = initial_columns(model, psi0, len(streams))
    obs = check_observables(model, observables)
    stack = _Stack(model)
    rec = Recorder(grid, psi.shape[1], obs, model.dim, keep_states, keep_density)
    for k in range(grid.n_steps + 1):
        if rec.due(k):
            rec.take(psi)
        if k == grid.n_steps:
            break
        noise = draw_noise(streams, model.n_channels, grid.dt, method) if model.n_channels else None
        psi = _drift_noise(stack, psi, grid.dt, method, noise)
        _finite_or_raise(psi)
        psi = normalize_cols(psi)
    return BatchResult(grid.times, rec.values, psi.T.copy(), states=rec.states, dt=grid.dt, density_sum=rec.density)


def run_qsd_trajectory(
    model: LindbladModel,
    phi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray] = (),
    method: DiffusionMethod | str = DiffusionMethod.ITO_COMPLEX,
    rng: Streams | None = None,
    master_seed: int = 0,
    traj_index: int = 0,
) -> TrajectoryRecord:
    phi0 = check_state(phi0, model.dim)
    if rng is None:
        rng = trajectory_stream(master_seed, traj_index)
    res = propagate_diffusion(model, phi0, grid, observables, method, rng)
    return res.record(0, traj_index, master_seed)


# -- finite reference field ------------------------------------------------------

def check_finite_mu(model: LindbladModel, dt: float, mu: float) -> None:
    """Raise if dt cannot resolve individual jumps; warn if mu is not large."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    limit = FINITE_MU_DT / mu**2
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"finite_mu needs dt <= {limit:.4g} at mu = {mu:g}, got {dt:g}", measured=dt, limit=limit)
    eta = stability_bound(model)
    if mu**2 < FINITE_MU_RATIO * eta:
        warnings.warn(
            f"mu**2 = {mu**2:.4g} is below {FINITE_MU_RATIO:g} * stability_bound = {FINITE_MU_RATIO * eta:.4g}; "
            "the run is still an exact unraveling but far from the diffusive regime",
            RuntimeWarning,
            stacklevel=3,
        )


def propagate_finite_mu(
    model: LindbladModel,
    psi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray],
    mu: float,
    scheme: str,
    streams: Streams,
    delta_p_max: float = DELTA_P_MAX,
    keep_states: bool = False,
    keep_density: bool = False,
    jump_method: StepMethod | str = StepMethod.WAITING_TIME,
) -> BatchResult:
    """Jump unraveling with reference-mixed channels.

    Waiting-time sampling is the default: fixed-step schemes carry an O(dt * mu**2)
    bias here because the total jump probability per step stays near 0.05.
    """
    check_finite_mu(model, grid.dt, mu)
    mixed = homodyne_channels(model, mu, scheme)
    return propagate_jumps(
        mixed, psi0, grid, observables, jump_method, streams, delta_p_max, keep_states, keep_density
    )


def finite_mu_run(
    model: LindbladModel,
    phi0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray] = (),
    mu: float = 10.0,
    scheme: str = "two_phase",
    rng: Streams | None = None,
    master_seed: int = 0,
    traj_index: int = 0,
    delta_p_max: float = DELTA_P_MAX,
) -> TrajectoryRecord:
    """Jump trajectory with reference-mixed channels; channel ``m * P + p`` is phase ``p`` of ``C_m``."""
    phi0 = check_state(phi0, model.dim)
    if rng is None:
        rng = trajectory_stream(master_seed, traj_index)
    res = propagate_finite_mu(model, phi0, grid, observables, mu, scheme, rng, delta_p_max)
    return res.record(0, traj_index, master_seed)


@dataclass
class CountStatistics:
    """Jump counts in consecutive windows of equal length."""

    window: float
    counts: np.ndarray  # (n_windows, n_channels), pooled over records

    @property
    def mean(self) -> np.ndarray:
        return self.counts.mean(axis=0)

    @property
    def var(self) -> np.ndarray:
        return self.counts.var(axis=0, ddof=1) if self.counts.shape[0] > 1 else np.full(self.counts.shape[1], np.nan)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def window_counts(record: TrajectoryRecord, window: float, n_channels: int) -> np.ndarray:
    """Counts per (window, channel); windows are half-open on the left, (a, a + window]."""
    t0, t1 = float(record.times[0]), float(record.times[-1])
    n_win = int(math.floor((t1 - t0) / window + 1e-9))
    counts = np.zeros((n_win, n_channels), dtype=np.int64)
    if n_win == 0 or not record.jumps:
        return counts
    rel = (record.jump_times - t0) / window
    idx = np.ceil(rel - 1e-9).astype(np.int64) - 1
    keep = (idx >= 0) & (idx < n_win)
    np.add.at(counts, (idx[keep], record.jump_channels[keep]), 1)
    return counts


def jump_count_statistics(
    records: TrajectoryRecord | Sequence[TrajectoryRecord],
    window: float,
    n_channels: int | None = None,
) -> CountStatistics:
    """Pool windowed jump counts over one or several records."""
    if isinstance(records, TrajectoryRecord):
        records = [records]
    if not records:
        raise ValueError("no records given")
    for r in records:
        if window < r.dt:
            raise ValueError(f"window {window:g} is smaller than the time step {r.dt:g}")
    if n_channels is None:
        n_channels = 1 + max((int(r.jump_channels.max()) for r in records if r.jumps), default=0)
    blocks = [window_counts(r, window, n_channels) for r in records]
    return CountStatistics(window, np.concatenate(blocks, axis=0))


def homodyne_signal(stats: CountStatistics, mu: float, scheme: str = "two_phase") -> np.ndarray:
    """Count differences per original channel, scaled by 1/mu.

    ``two_phase`` gives the real (N_+ - N_-)/mu with mean ~ window <C + C^dag>
    and standard deviation ~ sqrt(window). ``four_phase`` gives the complex
    ((N_+ - N_-) + i (N_{+i} - N_{-i})) / mu.
    """
    phases, _ = HOMODYNE_SCHEMES[scheme]
    p = len(phases)
    c = stats.counts
    if c.shape[1] % p:
        raise DimensionError(f"{c.shape[1]} channels is not a multiple of {p}")
    c = c.reshape(c.shape[0], -1, p).astype(float)
    signal = c[..., 0] - c[..., 1]
    if scheme == "four_phase":
        signal = signal + 1j * (c[..., 2] - c[..., 3])
    return signal / mu
