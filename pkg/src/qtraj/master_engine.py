"""Deterministic density-matrix integrator, the oracle for all unravelings.

Classical RK4 on rho itself: every stage is a handful of N x N products,
so no N^2 x N^2 superoperator is ever formed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import TimeGrid
from .quantum_core import (
    LindbladModel,
    check_density_matrix,
    lindblad_rhs,
    stability_bound,
)

#: dt * stability_bound above which an RK4 step is considered unsafe
RK4_GUARD = 0.5


@dataclass
class DensityTrace:
    times: np.ndarray
    values: np.ndarray  # (n_times, n_observables), real
    states: np.ndarray | None = None  # (n_times, N, N) when requested


def _rk4(model: LindbladModel, rho: np.ndarray, dt: float) -> np.ndarray:
    k1 = lindblad_rhs(model, rho)
    k2 = lindblad_rhs(model, rho + 0.5 * dt * k1)
    k3 = lindblad_rhs(model, rho + 0.5 * dt * k2)
    k4 = lindblad_rhs(model, rho + dt * k3)
    out = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (out + out.conj().T)


def me_step_rk4(model: LindbladModel, rho: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step of the master equation, followed by re-Hermitization."""
    if dt * stability_bound(model) > RK4_GUARD:
        warnings.warn(
            f"dt * stability_bound = {dt * stability_bound(model):.3g} exceeds {RK4_GUARD}; "
            "the RK4 step may be inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    return _rk4(model, np.asarray(rho, dtype=np.complex128), dt)


def _observable_values(rho: np.ndarray, observables: Sequence[np.ndarray]) -> np.ndarray:
    # Tr(rho A) = sum_ij rho_ij A_ji
    return np.array([np.sum(rho * np.asarray(a).T).real for a in observables])


def me_evolve(
    model: LindbladModel,
    rho0: np.ndarray,
    grid: TimeGrid,
    observables: Sequence[np.ndarray] = (),
    keep_states: bool = True,
) -> DensityTrace:
    """Integrate the master equation over ``grid`` and record Tr(rho A)."""
    rho = check_density_matrix(rho0, model.dim).copy()
    for a in observables:
        if np.shape(a) != (model.dim, model.dim):
            raise ValueError(f"observable shape {np.shape(a)} does not match model dimension {model.dim}")
    if grid.dt * stability_bound(model) > RK4_GUARD:
        warnings.warn(
            f"dt * stability_bound = {grid.dt * stability_bound(model):.3g} exceeds {RK4_GUARD}",
            RuntimeWarning,
            stacklevel=2,
        )
    sample_steps = grid.sample_steps
    values = np.empty((sample_steps.size, len(observables)))
    states = np.empty((sample_steps.size, model.dim, model.dim), dtype=np.complex128) if keep_states else None
    s = 0
    for k in range(grid.n_steps + 1):
        if s < sample_steps.size and k == sample_steps[s]:
            values[s] = _observable_values(rho, observables)
            if states is not None:
                states[s] = rho
            s += 1
        if k < grid.n_steps:
            rho = _rk4(model, rho, grid.dt)
    return DensityTrace(grid.times, values, states)


def me_steady_state(
    model: LindbladModel,
    tol: float = 1e-10,
    dt: float | None = None,
    max_steps: int = 2_000_000,
) -> np.ndarray:
    """Fixed point of the master equation, reached by evolving the maximally mixed state.

    Stops once the largest entry of the right-hand side is below ``tol``.
    Raises ``RuntimeError`` if ``max_steps`` is exhausted first.
    """
    if model.n_channels == 0:
        raise ValueError("steady state requires at least one jump operator")
    if dt is None:
        dt = 0.1 / stability_bound(model)
    rho = np.eye(model.dim, dtype=np.complex128) / model.dim
    for _ in range(max_steps):
        if np.max(np.abs(lindblad_rhs(model, rho))) < tol:
            return rho
        rho = _rk4(model, rho, dt)
        rho /= np.trace(rho).real
    raise RuntimeError(f"steady state not reached within {max_steps} steps (tol={tol})")
