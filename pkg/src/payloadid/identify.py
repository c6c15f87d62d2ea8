"""Closed-form payload identification from joint-torque residuals.

A rigid object attached past the wrist loads the arm with a gravity wrench
that is linear in the parameter vector x = [m, m*cx, m*cy, m*cz], where
(cx, cy, cz) is the object's COM in the tag frame. Each steady-state sample
therefore contributes N linear equations

    tau_load(q) = tau(q) - tau_free(q) = regressor(q) @ x

and a window of M samples stacks into an (M*N) x 4 weighted least-squares
problem. The solve is done by QR on the sqrt-weight-scaled rows, which is
algebraically the usual normal-equation solution but better conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ArmModel, Pose, forward_kinematics, jacobian, skew
from .errors import RankDeficiencyError
from .statics import Wrench

DEFAULT_CONDITION_CAP = 1e10
DEFAULT_MASS_FLOOR = 1e-4


@dataclass
class IdentSystem:
    """Stacked weighted least-squares system for one window of samples.

    regressor: (M*N, 4); residual: (M*N,) measured-minus-free torques;
    weights: (M*N,) strictly positive diagonal. Rows are ordered
    sample-major, joint-minor.
    """

    regressor: np.ndarray
    residual: np.ndarray
    weights: np.ndarray
    n_joints: int

    def __post_init__(self):
        self.regressor = np.asarray(self.regressor, dtype=float)
        self.residual = np.asarray(self.residual, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        rows = self.regressor.shape[0]
        if self.regressor.ndim != 2 or self.regressor.shape[1] != 4:
            raise ValueError("regressor must be (M*N, 4)")
        if self.residual.shape != (rows,) or self.weights.shape != (rows,):
            raise ValueError("residual/weights must match regressor row count")
        if self.n_joints < 1 or rows % self.n_joints != 0:
            raise ValueError("row count must be a positive multiple of n_joints")
        if not (
            np.all(np.isfinite(self.regressor))
            and np.all(np.isfinite(self.residual))
            and np.all(np.isfinite(self.weights))
        ):
            raise ValueError("system entries must be finite")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def n_samples(self) -> int:
        return self.regressor.shape[0] // self.n_joints


@dataclass
class InertialEstimate:
    """Identified payload parameters from one window.

    `solution` is the raw 4-vector [m, m*cx, m*cy, m*cz]; `com_tag` is the
    COM in the tag frame, valid only when `com_defined` (the estimated mass
    can fall below the floor that makes the division meaningful).
    """

    mass: float
    com_tag: np.ndarray
    condition_number: float
    residual_cost: float
    solution: np.ndarray
    com_defined: bool = True

    def __post_init__(self):
        self.com_tag = np.asarray(self.com_tag, dtype=float)
        self.solution = np.asarray(self.solution, dtype=float)
        if self.condition_number < 1.0:
            raise ValueError("condition number of a PSD system is >= 1")


def wrench_basis(
    gravity: np.ndarray, tag_pose: Pose, ee_position: np.ndarray
) -> np.ndarray:
    """6x4 matrix mapping [m, m*com_tag] to the negated end-effector wrench.

    basis @ x == [-force; -moment] of the payload's gravity wrench, for any
    payload. Top rows: force is m*g, so the first column is -g and the rest
    zero. Bottom rows: the moment arm splits into the tag origin offset
    (mass column) and the tag-frame COM offset (rotated into base frame).
    """
    gravity = np.asarray(gravity, dtype=float)
    ee_position = np.asarray(ee_position, dtype=float)
    g_cross = skew(gravity)
    basis = np.zeros((6, 4))
    basis[:3, 0] = -gravity
    basis[3:, 0] = g_cross @ (tag_pose.translation - ee_position)
    basis[3:, 1:] = g_cross @ tag_pose.rotation
    return basis


def torque_regressor(jac: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Nx4 map from payload parameters to the load part of joint torques.

    Equals jacobian^T @ basis: the transpose Jacobian carries the (negated)
    end-effector wrench into joint torques.
    """
    jac = np.asarray(jac, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != 6 or basis.shape != (6, 4):
        raise ValueError("need a 6xN jacobian and a 6x4 basis")
    return jac.T @ basis


def sample_regressor(arm: ArmModel, q: np.ndarray, tag_pose: Pose) -> np.ndarray:
    """Nx4 regressor for one sample: geometry from q, tag pose as measured.

    The joint-side geometry (Jacobian, end-effector position) comes from the
    reported joint angles; the tag pose is taken from its own measurement
    channel rather than recomputed, so encoder noise and tag noise stay
    independent.
    """
    poses = forward_kinematics(arm, q, check_limits=False)
    jac = jacobian(arm, q, poses=poses, check_limits=False)
    basis = wrench_basis(arm.gravity, tag_pose, poses[arm.n_joints].translation)
    return torque_regressor(jac, basis)


def stack_system(
    arm: ArmModel,
    samples,
    torque_estimates: np.ndarray,
    weights: np.ndarray | None = None,
) -> IdentSystem:
    """Stack M samples into one identification system.

    torque_estimates: (M, N) estimated loaded torques. weights: (M, N)
    per-joint weights, or None for identity. Residuals are estimate minus
    the sample's recorded free-motion torque.
    """
    torque_estimates = np.asarray(torque_estimates, dtype=float)
    m = len(samples)
    n = arm.n_joints
    if m == 0:
        raise ValueError("cannot stack an empty window")
    if torque_estimates.shape != (m, n):
        raise ValueError(
            f"torque estimates must be ({m}, {n}), got {torque_estimates.shape}"
        )
    if weights is None:
        weights = np.ones((m, n))
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (m, n):
            raise ValueError(f"weights must be ({m}, {n})")
    regressor = np.vstack([sample_regressor(arm, s.q, s.tag_pose) for s in samples])
    residual = np.concatenate([torque_estimates[i] - samples[i].tau_g for i in range(m)])
    return IdentSystem(regressor, residual, weights.reshape(-1), n)


def _normal_matrix_spectrum(system: IdentSystem):
    a = system.regressor
    normal = a.T @ (system.weights[:, None] * a)
    eigvals, eigvecs = np.linalg.eigh(normal)
    return normal, eigvals, eigvecs


def solve_wls(
    system: IdentSystem,
    *,
    known_mass: float | None = None,
    condition_cap: float = DEFAULT_CONDITION_CAP,
    mass_floor: float = DEFAULT_MASS_FLOOR,
) -> InertialEstimate:
    """Weighted least-squares payload estimate for one stacked system.

    Minimizes sum_k w_k (residual_k - regressor_k . x)^2 over x, then splits
    x into mass and COM. When `known_mass` is given (training-time use) the
    COM division uses it instead of the estimated mass. An ill-conditioned
    normal matrix raises RankDeficiencyError carrying the unobservable
    parameter direction; an estimated mass below `mass_floor` leaves the COM
    flagged undefined (NaN coordinates).
    """
    if system.regressor.shape[0] < 4:
        raise ValueError("need at least 4 stacked equations to identify 4 parameters")
    _, eigvals, eigvecs = _normal_matrix_spectrum(system)
    lo, hi = float(eigvals[0]), float(eigvals[-1])
    if lo <= 0.0 or hi / lo > condition_cap:
        direction = eigvecs[:, 0]
        raise RankDeficiencyError(
            "identification window is rank deficient: parameter direction "
            f"{np.array2string(direction, precision=4)} is unobservable "
            f"(normal-matrix eigenvalues {eigvals})",
            direction=direction,
        )
    condition = hi / lo
    sqrt_w = np.sqrt(system.weights)
    q_mat, r_mat = np.linalg.qr(sqrt_w[:, None] * system.regressor)
    x = np.linalg.solve(r_mat, q_mat.T @ (sqrt_w * system.residual))
    fit_residual = system.residual - system.regressor @ x
    cost = float(np.dot(system.weights, fit_residual**2))
    mass = float(x[0])
    divisor = mass if known_mass is None else float(known_mass)
    if divisor < mass_floor:
        com = np.full(3, np.nan)
        com_defined = False
    else:
        com = x[1:] / divisor
        com_defined = True
    return InertialEstimate(
        mass=mass,
        com_tag=com,
        condition_number=condition,
        residual_cost=cost,
        solution=x,
        com_defined=com_defined,
    )


def wls_weight_gradient(
    system: IdentSystem, solution: np.ndarray, grad_solution: np.ndarray
) -> np.ndarray:
    """Gradient of a scalar loss through the WLS solve, w.r.t. the weights.

    Given dL/dx at the solved x, returns dL/dw_k for every stacked row.
    Differentiating x(w) = (A^T W A)^{-1} A^T W r gives

        dx/dw_k = H^{-1} a_k (r_k - a_k . x),   H = A^T W A,

    so dL/dw_k = (A H^{-1} dL/dx)_k * (r_k - a_k . x), evaluated here with
    one 4x4 solve and two matrix-vector products.
    """
    solution = np.asarray(solution, dtype=float)
    grad_solution = np.asarray(grad_solution, dtype=float)
    a = system.regressor
    normal = a.T @ (system.weights[:, None] * a)
    u = np.linalg.solve(normal, grad_solution)
    return (a @ u) * (system.residual - a @ solution)
