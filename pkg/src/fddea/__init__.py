"""Secure federated data-driven evolutionary multi-objective optimization."""

from ._version import __version__
from .acquisition import federated_lcb, federated_mean_sigma, flcb, normalize_columns
from .federation import ExperimentConfig, RunLog, run_experiment, select_query_points, setup
from .metrics import comm_check, igd, rank_correlation
from .moea import adapt_refvecs, apd_select, generate_offspring, simplex_lattice_refvecs
from .problems import ProblemInstance, evaluate, latin_hypercube, make_problem, sample_pareto_front
from .secagg import (GroupParams, Keyring, KeyPair, Salt, compute_mask, derive_shared_key,
                     gen_group_params, keygen, mask_stream, unmask_aggregate)
from .surrogate import RBFNRegressor, TrainConfig, fedavg, predict, train_rbfn

__all__ = [
    "__version__",
    "ExperimentConfig", "GroupParams", "KeyPair", "Keyring", "ProblemInstance",
    "RBFNRegressor", "RunLog", "Salt", "TrainConfig",
    "adapt_refvecs", "apd_select", "comm_check", "compute_mask", "derive_shared_key",
    "evaluate", "fedavg", "federated_lcb", "federated_mean_sigma", "flcb",
    "gen_group_params", "generate_offspring", "igd", "keygen", "latin_hypercube",
    "make_problem", "mask_stream", "normalize_columns", "predict", "rank_correlation",
    "run_experiment", "sample_pareto_front", "select_query_points", "setup",
    "simplex_lattice_refvecs", "train_rbfn", "unmask_aggregate",
]
