"""Interval bounds on the returns to friendships with an age-distance instrument."""

from .bounds import BoundResult, BoundSpec, PartialIVBounds, estimate_bounds, im_confidence_interval, im_critical_value, sign_probe
from .data import (
    EdgeList,
    Individual,
    ObservationTable,
    compute_age_distance,
    compute_cohort_means,
    compute_degree_measures,
    load_edges,
    load_individuals,
)
from .diagnostics import (
    barrett_donald_test,
    cdf_difference_curve,
    placebo_battery,
    residual_barrett_donald,
    residual_variation,
)
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    EstimationError,
    FriendBoundsError,
    RankDeficiencyError,
    SeparationError,
)
from .instruments import ProbitFormula, ProbitRegression, build_dyads, predicted_indegree, probit_fit
from . import reporting
from .montecarlo import MCConfig, run_monte_carlo
from .pipeline import EstimationConfig, EstimationReport, prepare_table, run_estimation, truth_comparison
from .regress import IVRegression, OLSRegression, RegressionSpec, iv_gmm, joint_F, ols
from .simulate import (
    AgentParams,
    EquilibriumState,
    LinearDGPConfig,
    SimConfig,
    best_response,
    find_equilibrium,
    realize_outcomes,
    simulate_linear_dgp,
    simulate_structural,
)

__version__ = "0.1.0"
