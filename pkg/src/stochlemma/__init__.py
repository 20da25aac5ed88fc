"""Data-driven prediction and chance-constrained control of stochastic LTI
systems from input-output data, with polynomial chaos expansions carrying
the disturbance uncertainty."""
from .errors import (
    ConfigError,
    DataError,
    Infeasible,
    NotPersistentlyExciting,
    SolverError,
    StochLemmaError,
    Unbounded,
)
from .lti import RealTrajectory, StateSpaceModel, VarxModel, simulate_state_space, simulate_varx, varx_from_state_space
from .pce import DisturbanceSpec, Gaussian, JointBasis, PceTrajectory, Uniform
from .predictor import Prediction, predict_lemma1, predict_undisturbed, propagate_all
from .estimator import estimate_disturbances
from .ocp import ChanceConstraint, OcpProblem, OcpSolution, build_ocp, solve_ocp
from .socp import ConeDims, solve_cone_qp

__version__ = "0.1.0"

__all__ = [
    "ChanceConstraint",
    "ConeDims",
    "ConfigError",
    "DataError",
    "DisturbanceSpec",
    "Gaussian",
    "Infeasible",
    "JointBasis",
    "NotPersistentlyExciting",
    "OcpProblem",
    "OcpSolution",
    "PceTrajectory",
    "Prediction",
    "RealTrajectory",
    "SolverError",
    "StateSpaceModel",
    "StochLemmaError",
    "Unbounded",
    "Uniform",
    "VarxModel",
    "build_ocp",
    "estimate_disturbances",
    "predict_lemma1",
    "predict_undisturbed",
    "propagate_all",
    "simulate_state_space",
    "simulate_varx",
    "solve_cone_qp",
    "solve_ocp",
    "varx_from_state_space",
]
