"""Sensorless payload identification on a simulated serial arm.

The package simulates position-controlled steady states of an N-joint arm,
estimates external joint torques from encoder discrepancies with a learned
model, weights joints with a learned attention model, and recovers an
attached object's mass and centre of mass by weighted least squares.

Modules
-------
arm             kinematics: poses, forward kinematics, Jacobian
statics         gravity loads and static joint torques
identify        wrench regressor and the weighted least-squares solve
nn              minimal MLP + Adam used by both learned models
sim             steady-state simulation, datasets, trajectories
torque_model    learned external-torque estimator
attention_model learned per-joint weighting, trained through the solve
metrics         error metrics, linear baselines, force tracking
config          experiment configuration files
cli             command-line pipeline (``payloadid`` entry point)
"""

from .arm import ArmModel, Pose, forward_kinematics, jacobian
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    NumericalError,
    PayloadIdError,
    RankDeficiencyError,
)
from .identify import InertialEstimate, solve_wls, stack_system
from .statics import ObjectSpec, Wrench, static_joint_torques

__version__ = "0.1.0"

__all__ = [
    "ArmModel",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "InertialEstimate",
    "NumericalError",
    "ObjectSpec",
    "PayloadIdError",
    "Pose",
    "RankDeficiencyError",
    "Wrench",
    "forward_kinematics",
    "jacobian",
    "solve_wls",
    "stack_system",
    "__version__",
]
