"""Monte-Carlo wave-function simulation of Markovian open quantum systems."""

__version__ = "0.1.0"

from .diffusion_engine import (
    CountStatistics,
    DiffusionMethod,
    finite_mu_run,
    homodyne_signal,
    jump_count_statistics,
    propagate_diffusion,
    propagate_finite_mu,
    qsd_step,
    run_qsd_trajectory,
)
from .ensemble_stats import EnsembleResult, InitialMixture, Moments, mean_density, run_ensemble, sample_initial
from .grid import TimeGrid
from .jump_engine import (
    JumpEvent,
    NormIncreaseError,
    StepMethod,
    StepSizeError,
    TrajectoryRecord,
    ZeroNormJumpError,
    jump_probabilities,
    mcwf_step,
    propagate_jumps,
    run_trajectory,
    waiting_time_trajectory,
)
from .master_engine import DensityTrace, me_evolve, me_steady_state, me_step_rk4
from .presets import (
    CavityParams,
    ThreeLevelParams,
    TwoLevelParams,
    damped_cavity_model,
    three_level_model,
    two_level_model,
)
from .quantum_core import (
    DimensionError,
    LindbladModel,
    basis_state,
    effective_hamiltonian,
    expectation,
    homodyne_channels,
    lindblad_rhs,
    projector,
    pure_density,
    stability_bound,
    unfold_transform,
)
from .rng import Streams, trajectory_stream
