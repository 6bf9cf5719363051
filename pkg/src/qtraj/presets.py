"""Ready-made models: driven two-level atom, damped cavity mode, V-type three-level atom.

Basis orders are fixed:

* two-level: (|e>, |g>), so the excited amplitude is component 0;
* cavity: Fock states |0> ... |n_max>;
* three-level: (|g>, |s>, |w>) with strong and weak excited states.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .quantum_core import LindbladModel

EXCITED, GROUND = 0, 1
TRUNCATION_TOL = 1e-6


@dataclass(frozen=True)
class TwoLevelParams:
    gamma: float = 1.0
    rabi: float = 0.0
    detuning: float = 0.0  # laser minus atomic frequency

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.rabi < 0:
            raise ValueError(f"rabi must be non-negative, got {self.rabi}")


@dataclass(frozen=True)
class CavityParams:
    kappa: float = 1.0
    n_max: int = 10
    drive: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        if self.drive < 0:
            raise ValueError(f"drive must be non-negative, got {self.drive}")


@dataclass(frozen=True)
class ThreeLevelParams:
    gamma_strong: float = 1.0
    gamma_weak: float = 0.01
    rabi_strong: float = 1.0
    rabi_weak: float = 0.05

    def __post_init__(self):
        if not self.gamma_weak > 0:
            raise ValueError(f"gamma_weak must be positive, got {self.gamma_weak}")
        if self.gamma_strong < self.gamma_weak:
            raise ValueError("gamma_strong must be at least gamma_weak")
        if self.rabi_strong < 0 or self.rabi_weak < 0:
            raise ValueError("Rabi frequencies must be non-negative")


def two_level_model(p: TwoLevelParams | None = None, **kwargs) -> LindbladModel:
    """Rotating-frame two-level atom with spontaneous emission.

    H_S = -detuning |e><e| + (rabi/2)(|e><g| + |g><e|), single jump
    operator sqrt(gamma) |g><e|.
    """
    p = p or TwoLevelParams(**kwargs)
    h = np.array([[-p.detuning, p.rabi / 2], [p.rabi / 2, 0.0]], dtype=np.complex128)
    lower = np.zeros((2, 2), dtype=np.complex128)
    lower[GROUND, EXCITED] = np.sqrt(p.gamma)
    return LindbladModel(h, (lower,))


def annihilation(n_max: int) -> np.ndarray:
    """a|n> = sqrt(n)|n-1> on the truncated Fock space {0..n_max}."""
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(np.complex128)


def number_operator(n_max: int) -> np.ndarray:
    return np.diag(np.arange(n_max + 1)).astype(np.complex128)


def damped_cavity_model(p: CavityParams | None = None, **kwargs) -> LindbladModel:
    """Driven damped mode: H_S = drive (a + a^dagger), jump operator sqrt(kappa) a.

    Truncation is a hard cutoff at n_max; check with :func:`warn_if_truncated`.
    """
    p = p or CavityParams(**kwargs)
    a = annihilation(p.n_max)
    return LindbladModel(p.drive * (a + a.conj().T), (np.sqrt(p.kappa) * a,))


def warn_if_truncated(top_population: float, n_max: int, tol: float = TRUNCATION_TOL) -> bool:
    """Warn when the population of |n_max> exceeds ``tol``; returns True if it did."""
    if top_population > tol:
        warnings.warn(
            f"population {top_population:.3g} in |n_max={n_max}> exceeds {tol:g}; increase n_max",
            RuntimeWarning,
            stacklevel=2,
        )
        return True
    return False


def three_level_model(p: ThreeLevelParams | None = None, **kwargs) -> LindbladModel:
    """V system: |g> driven to a fast-decaying |s> and a slow-decaying |w>.

    Channel 0 is the strong decay |s> -> |g>, channel 1 the weak decay
    |w> -> |g>. Long gaps between strong-channel photons (dark periods)
    appear when the atom is shelved in |w>.
    """
    p = p or ThreeLevelParams(**kwargs)
    g, s, w = 0, 1, 2
    h = np.zeros((3, 3), dtype=np.complex128)
    h[s, g] = h[g, s] = p.rabi_strong / 2
    h[w, g] = h[g, w] = p.rabi_weak / 2
    c_strong = np.zeros((3, 3), dtype=np.complex128)
    c_strong[g, s] = np.sqrt(p.gamma_strong)
    c_weak = np.zeros((3, 3), dtype=np.complex128)
    c_weak[g, w] = np.sqrt(p.gamma_weak)
    return LindbladModel(h, (c_strong, c_weak))


PRESETS = {
    "two_level": (two_level_model, TwoLevelParams),
    "damped_cavity": (damped_cavity_model, CavityParams),
    "three_level": (three_level_model, ThreeLevelParams),
}

#: basis index of the natural starting state of each preset
PRESET_GROUND = {"two_level": GROUND, "damped_cavity": 0, "three_level": 0}
