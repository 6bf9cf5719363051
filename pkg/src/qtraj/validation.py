"""Built-in self-checks, grouped into suites runnable from the command line.

Every check returns a :class:`Check` with the measured value, the expected
value and the tolerance used. Statistical tolerances are written as
``k * sigma / sqrt(n)`` so that running a suite with fewer samples widens the
acceptance band instead of producing spurious failures.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .diffusion_engine import draw_noise, jump_count_statistics, homodyne_signal, propagate_finite_mu
from .ensemble_stats import run_ensemble
from .grid import TimeGrid
from .jump_engine import propagate_jumps
from .master_engine import me_evolve, me_step_rk4
from .presets import damped_cavity_model, number_operator, two_level_model
from .quantum_core import (
    LindbladModel,
    basis_state,
    homodyne_channels,
    lindblad_rhs,
    projector,
    pure_density,
    unfold_transform,
)
from .rng import Streams

SUITES = ("identities", "oracle_small", "statistics", "scaling")


@dataclass
class Check:
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    note: str = ""


@dataclass
class Report:
    suite: str
    fraction: float
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "suite": self.suite,
            "fraction": self.fraction,
            "widened": self.fraction < 1.0,
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [asdict(c) for c in self.checks],
        }


def _within(name, measured, expected, tol, note="") -> Check:
    measured, expected = float(measured), float(expected)
    return Check(name, bool(abs(measured - expected) <= tol), measured, expected, float(tol), note)


def _below(name, measured, limit, note="") -> Check:
    return Check(name, bool(float(measured) <= limit), float(measured), 0.0, float(limit), note)


# -- random models -----------------------------------------------------------------

def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def random_model(rng: np.random.Generator, n: int, m: int) -> LindbladModel:
    ops = [(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / math.sqrt(n) for _ in range(m)]
    return LindbladModel(random_hermitian(rng, n), tuple(ops))


def random_density(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# -- identities ------------------------------------------------------------------------

def channel_identity_errors(n_models: int = 20, seed: int = 2024) -> dict[str, float]:
    """Largest entrywise deviation of transformed-channel generators from the original."""
    rng = np.random.default_rng(seed)
    worst = {"two_phase": 0.0, "four_phase": 0.0, "unfold": 0.0}
    for _ in range(n_models):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        model = random_model(rng, n, m)
        rho = random_density(rng, n)
        ref = lindblad_rhs(model, rho)
        mu = float(rng.uniform(0.5, 20.0))
        for scheme in ("two_phase", "four_phase"):
            err = np.max(np.abs(lindblad_rhs(homodyne_channels(model, mu, scheme), rho) - ref))
            worst[scheme] = max(worst[scheme], float(err))
        err = np.max(np.abs(lindblad_rhs(unfold_transform(model, random_unitary(rng, m)), rho) - ref))
        worst["unfold"] = max(worst["unfold"], float(err))
    return worst


def bloch_rates(gamma: float = 1.0, t_end: float = 5.0, dt: float = 1e-3) -> tuple[float, float]:
    """Decay constants of excited population and coherence under the undriven model, by log-linear fit."""
    model = two_level_model(gamma=gamma)
    plus = (basis_state(2, 0) + basis_state(2, 1)) / math.sqrt(2)
    grid = TimeGrid(0.0, t_end, dt, sample_every=100)
    trace = me_evolve(model, pure_density(plus), grid, keep_states=True)
    pop = trace.states[:, 0, 0].real
    coh = np.abs(trace.states[:, 0, 1])
    pop_rate = -np.polyfit(grid.times, np.log(pop), 1)[0]
    coh_rate = -np.polyfit(grid.times, np.log(coh), 1)[0]
    return float(pop_rate), float(coh_rate)


def suite_identities(fraction: float = 1.0) -> list[Check]:
    errs = channel_identity_errors()
    checks = [
        _below("homodyne_two_phase_rhs", errs["two_phase"], 1e-9),
        _below("homodyne_four_phase_rhs", errs["four_phase"], 1e-9),
        _below("unfold_transform_rhs", errs["unfold"], 1e-9),
    ]
    pop_rate, coh_rate = bloch_rates()
    checks.append(_within("population_decay_rate", pop_rate, 1.0, 1e-6))
    checks.append(_within("coherence_decay_rate", coh_rate, 0.5, 0.5e-6))
    heff = two_level_model(gamma=1.0).heff
    target = np.diag([-0.5j, 0.0])
    checks.append(_below("undriven_effective_hamiltonian", np.max(np.abs(heff - target)), 1e-15))
    return checks


# -- oracle comparisons ------------------------------------------------------------------

def band_ratio(mean, stderr, oracle, k: float = 4.5, bias: float = 1e-3) -> float:
    """max_t |mean - oracle| / (k * stderr + bias); at most 1 means inside the band.

    ``bias`` absorbs the O(dt) step error, which dominates while all
    trajectories are still identical and the standard error is zero.
    """
    return float(np.max(np.abs(mean - oracle) / (k * stderr + bias)))


def suite_oracle_small(fraction: float = 1.0) -> list[Check]:
    n = max(200, int(round(1000 * fraction)))
    checks = []
    rabi = two_level_model(gamma=1.0, rabi=3.0)
    g0 = basis_state(2, 1)
    grid = TimeGrid(0.0, 5.0, 1e-3, sample_every=250)
    oracle = me_evolve(rabi, pure_density(g0), grid, [projector(2, 0)], keep_states=False).values[:, 0]
    for engine in ("euler_order1", "rk4_nonhermitian", "waiting_time"):
        res = run_ensemble(rabi, g0, grid, [projector(2, 0)], engine, n, 11)
        checks.append(_below(f"two_level_{engine}_band", band_ratio(res.mean[:, 0], res.stderr[:, 0], oracle), 1.0))
    cavity = damped_cavity_model(kappa=1.0, n_max=3, drive=0.3)
    vac = basis_state(4, 0)
    obs = [number_operator(3)]
    grid = TimeGrid(0.0, 4.0, 1e-3, sample_every=250)
    oracle = me_evolve(cavity, pure_density(vac), grid, obs, keep_states=False).values[:, 0]
    for engine in ("euler_order1", "waiting_time"):
        res = run_ensemble(cavity, vac, grid, obs, engine, n, 12)
        checks.append(_below(f"cavity_{engine}_band", band_ratio(res.mean[:, 0], res.stderr[:, 0], oracle), 1.0))
    return checks


# -- statistics ------------------------------------------------------------------------------

def noise_covariance(n_samples: int, dt: float = 1e-3, seed: int = 5) -> np.ndarray:
    """Empirical [[Re.Re, Re.Im], [Im.Re, Im.Im]] / dt of complex Wiener increments."""
    streams = Streams(seed, np.arange(n_samples))
    xi = draw_noise(streams, 1, dt, "ito_complex")[0]
    pair = np.stack([xi.real, xi.imag])
    return (pair @ pair.T) / (n_samples * dt)


def waiting_times(n_traj: int, method: str, seed: int, gamma: float = 1.0, t_end: float = 15.0, dt: float = 1e-3):
    """First jump time of an undriven excited atom for each trajectory (NaN if none)."""
    model = two_level_model(gamma=gamma)
    grid = TimeGrid(0.0, t_end, dt, sample_every=int(round(t_end / dt)))
    first = np.full(n_traj, np.nan)
    for start in range(0, n_traj, 2048):
        idx = np.arange(start, min(start + 2048, n_traj))
        res = propagate_jumps(model, basis_state(2, 0), grid, (), method, Streams(seed, idx))
        rows, pos = np.unique(res.jump_row, return_index=True)
        first[idx[rows]] = res.jump_time[pos]
    return first


def ground_held_counts(n_traj: int, t_end: float, mu: float = 10.0, dt: float = 5e-4, seed: int = 3):
    model = two_level_model(gamma=1.0)
    grid = TimeGrid(0.0, t_end, dt, sample_every=int(round(t_end / dt)))
    res = propagate_finite_mu(model, basis_state(2, 1), grid, (), mu, "two_phase", Streams(seed, np.arange(n_traj)))
    return jump_count_statistics([res.record(i) for i in range(n_traj)], 1.0, 2)


def suite_statistics(fraction: float = 1.0) -> list[Check]:
    checks = []
    n = max(1000, int(round(1e6 * fraction)))
    # relative tolerances 0.5% at n = 1e6, scaled as 1/sqrt(n)
    scale = math.sqrt(1e6 / n)
    cov = noise_covariance(n)
    tol = 0.005 * scale
    checks.append(_within("noise_re_re", cov[0, 0], 1.0, tol))
    checks.append(_within("noise_im_im", cov[1, 1], 1.0, tol))
    checks.append(_within("noise_re_im", cov[0, 1], 0.0, tol))

    n_ks = max(200, int(round(1e4 * fraction)))
    ks_tol = 0.02 * math.sqrt(1e4 / n_ks)
    cdf = lambda t: 1.0 - np.exp(-t)  # noqa: E731
    euler = waiting_times(n_ks, "euler_order1", 21)
    wt = waiting_times(n_ks, "waiting_time", 22)
    checks.append(_below("waiting_time_ks_euler", stats.kstest(euler[np.isfinite(euler)], cdf).statistic, ks_tol))
    checks.append(_below("waiting_time_ks_delay", stats.kstest(wt[np.isfinite(wt)], cdf).statistic, ks_tol))
    checks.append(_below("waiting_time_ks_between", stats.ks_2samp(euler, wt).statistic, ks_tol))

    n_win_traj = max(2, int(round(40 * fraction)))
    st = ground_held_counts(n_win_traj, 25.0)
    w = st.counts.shape[0]
    scale = math.sqrt(1000 / w)
    mu, window = 10.0, 1.0
    mean_expected = mu**2 * window / 2
    checks.append(_within("count_mean", st.mean.mean() / mean_expected, 1.0, 0.02 * scale))
    checks.append(_within("count_std", st.std.mean() / math.sqrt(mean_expected), 1.0, 0.10 * scale))
    sig = homodyne_signal(st, mu)[:, 0]
    checks.append(_within("signal_mean", sig.mean(), 0.0, 3 * sig.std(ddof=1) / math.sqrt(w)))
    checks.append(_within("signal_std", sig.std(ddof=1) / math.sqrt(window), 1.0, 0.10 * scale))
    return checks


# -- scaling ----------------------------------------------------------------------------------

def state_memory(n_max: int, steps: int = 20) -> dict[str, float]:
    """Bytes per stored state, plus traced peak memory of a few engine steps."""
    model = damped_cavity_model(kappa=1.0, n_max=n_max, drive=0.5)
    dim = n_max + 1
    phi = basis_state(dim, 0)
    rho = pure_density(phi)
    grid = TimeGrid(0.0, steps * 1e-3, 1e-3, sample_every=steps)
    model.heff  # build cached operators outside the traced region
    tracemalloc.start()
    propagate_jumps(model, phi, grid, (), "euler_order1", Streams(0, [0]))
    _, traj_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    tracemalloc.start()
    for _ in range(steps):
        rho = me_step_rk4(model, rho, 1e-3)
    _, me_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return {
        "dim": dim,
        "trajectory_state_bytes": phi.nbytes,
        "density_state_bytes": rho.nbytes,
        "trajectory_peak_bytes": traj_peak,
        "master_peak_bytes": me_peak,
    }


def scaling_report(sizes=(50, 100, 200)) -> list[dict]:
    return [state_memory(n) for n in sizes]


def suite_scaling(fraction: float = 1.0) -> list[Check]:
    rows = scaling_report()
    checks = []
    for a, b in zip(rows, rows[1:]):
        tag = f"{a['dim'] - 1}->{b['dim'] - 1}"
        r_traj = b["trajectory_state_bytes"] / a["trajectory_state_bytes"]
        r_me = b["density_state_bytes"] / a["density_state_bytes"]
        checks.append(_within(f"trajectory_state_ratio_{tag}", r_traj, 2.0, 0.4))
        checks.append(_within(f"density_state_ratio_{tag}", r_me, 4.0, 0.8))
        checks.append(
            Check(
                f"peak_ratio_{tag}",
                True,
                b["master_peak_bytes"] / a["master_peak_bytes"],
                4.0,
                float("nan"),
                note=f"informational; trajectory engine peak ratio "
                f"{b['trajectory_peak_bytes'] / a['trajectory_peak_bytes']:.3g} includes its dense operators",
            )
        )
    return checks


_SUITES = {
    "identities": suite_identities,
    "oracle_small": suite_oracle_small,
    "statistics": suite_statistics,
    "scaling": suite_scaling,
}


def run_suite(name: str, fraction: float = 1.0) -> Report:
    if name not in _SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)}")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    t0 = time.perf_counter()
    checks = _SUITES[name](fraction)
    return Report(name, fraction, checks, time.perf_counter() - t0)

