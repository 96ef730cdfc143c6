"""Simulation and analysis of the continuous random energy model (CREM)."""

from .covariance import (
    CovarianceProfile,
    PathFunction,
    ProfileError,
    ThresholdReport,
    builtin_profile,
    concave_hull,
    energy_functional,
    evaluate,
    load_profile,
    make_profile,
    natural_speed_path,
    optimal_path,
    save_profile,
    thresholds,
    variational_check,
)
from .field import FIELD_VERSION, FieldOracle, NodeId, QueryLedger
from .hardness import SteepParams, spindle_chain, steep_chain_probability_mc, steep_threshold_params
from .search import SearchResult, block_greedy, exhaustive_max, leaf_only_greedy, random_leaf_baseline

__version__ = "0.1.0"
