"""Stochastic MPC with probabilistic-reachable-set constraint tightening.

The nominal MPC problem is solved by a dual active-set QP kernel that is
compiled with Cython when available (``prsmpc._core.BACKEND`` says which
one is in use).
"""
from ._core import BACKEND
from .config import ExperimentConfig, bundled_config, build_setup, load_config, sim_config
from .controller import ControllerState, SmpcCDesign, smpc_c_step, smpc_prs_step
from .errors import (
    BackupInfeasible,
    CholeskyFailure,
    ConfigError,
    DomainError,
    EmptyTightening,
    InitialInfeasible,
    IterationLimit,
    NonConvergent,
    PrsMpcError,
    Unbounded,
)
from .optimizer import LinearSystem, MpcProblem, solve_mpc
from .reachability import EllipsoidPrs, IntervalPrs, Polytope
from .simulator import EnsembleResult, SimConfig, empirical_satisfaction, run_ensemble, run_trial
from .uncertainty import DisturbanceSchedule, GaussianDisturbance, RngStream

__version__ = "0.1.0"
