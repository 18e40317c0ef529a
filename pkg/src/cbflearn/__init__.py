"""cbflearn: learning provably valid control barrier functions from demonstrations."""

from cbflearn.dynamics import (
    ControlAffineSystem,
    Trajectory,
    eval_vector_field,
    make_aircraft,
    make_planar,
    rollout,
    step_rk4,
)
from cbflearn.features import CbfModel, MlpModel, RffMap, load_model, rff_init, save_model
from cbflearn.geometry import DemonstrationSet, NetParams, PointSet
from cbflearn.qp import QuadraticProgram, solve_qp

__version__ = "0.1.0"

__all__ = [
    "ControlAffineSystem",
    "Trajectory",
    "eval_vector_field",
    "step_rk4",
    "rollout",
    "make_planar",
    "make_aircraft",
    "PointSet",
    "NetParams",
    "DemonstrationSet",
    "RffMap",
    "MlpModel",
    "CbfModel",
    "rff_init",
    "save_model",
    "load_model",
    "QuadraticProgram",
    "solve_qp",
    "__version__",
]
