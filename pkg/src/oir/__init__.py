"""Occupancy information ratio (OIR): exact theory, learners and solvers for tabular MDPs."""

from .errors import *  # noqa: F401,F403
from .mdp import (
    OccupancyStats,
    SoftmaxPolicy,
    TabularMDP,
    occupancy_stats,
    oir_value,
    stationary_distribution,
)
from .envs import GridSpec, Trajectory, build_gridworld, build_simple_env, make_env, rollout
from .solve import OccupancySolution, kappa_sweep, lp_optimum, solve_lp, solve_oir

__version__ = "0.1.0"
