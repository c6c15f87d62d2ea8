"""Static load propagation: gravity wrenches and quasi-static joint torques.

Everything here assumes zero velocity and acceleration, so joint torques come
only from link weights and (optionally) a load applied at the end-effector.
Torques come from an outward-in recursion over the links: starting at the tip,
each joint accumulates the force and moment exerted by everything distal to
it, and the joint torque is the component of that moment about the joint
axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import ArmModel, Pose, forward_kinematics


@dataclass
class Wrench:
    """Force (N) and moment (N*m) applied at the end-effector point, base frame."""

    force: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        self.moment = np.asarray(self.moment, dtype=float)
        if self.force.shape != (3,) or self.moment.shape != (3,):
            raise ValueError("Wrench needs 3-vector force and moment")
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.moment))):
            raise ValueError("Wrench entries must be finite")

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))


@dataclass
class ObjectSpec:
    """Point-mass payload: mass (kg) and COM position in the tag frame (m)."""

    mass: float
    com_tag: np.ndarray

    def __post_init__(self):
        self.com_tag = np.asarray(self.com_tag, dtype=float)
        if self.mass < 0:
            raise ValueError("object mass must be non-negative")
        if self.com_tag.shape != (3,):
            raise ValueError("object COM must be a 3-vector")


def object_wrench(
    arm: ArmModel,
    q: np.ndarray,
    obj: ObjectSpec,
    *,
    poses: list[Pose] | None = None,
    check_limits: bool = True,
) -> Wrench:
    """Gravity wrench the payload exerts on the end-effector.

    force  = m * g
    moment = (p_obj - p_ee) x force,  p_obj = R_tag @ com_tag + p_tag
    """
    if poses is None:
        poses = forward_kinematics(arm, q, check_limits=check_limits)
    ee = poses[arm.n_joints]
    tag = poses[arm.n_joints + 1]
    force = obj.mass * arm.gravity
    p_obj = tag.rotation @ obj.com_tag + tag.translation
    moment = np.cross(p_obj - ee.translation, force)
    return Wrench(force, moment)


def static_joint_torques(
    arm: ArmModel,
    q: np.ndarray,
    ee_wrench: Wrench | None = None,
    *,
    poses: list[Pose] | None = None,
    check_limits: bool = True,
) -> np.ndarray:
    """Joint torques holding the arm still against gravity and an ee load.

    `ee_wrench` is the external load applied to the end-effector (base frame,
    referenced at the end-effector origin); None means free motion. The sign
    convention: a positive joint torque is what the actuator applies about
    +axis to cancel the distal load, so tau_j = -dot(n_j, z_j) with n_j the
    accumulated external moment about joint j's origin.
    """
    if poses is None:
        poses = forward_kinematics(arm, q, check_limits=check_limits)
    n = arm.n_joints
    # Running external load: force, and moment referenced at `point`.
    if ee_wrench is None:
        force, moment = np.zeros(3), np.zeros(3)
    else:
        force, moment = ee_wrench.force.copy(), ee_wrench.moment.copy()
    point = poses[n].translation
    tau = np.zeros(n)
    for j in range(n - 1, -1, -1):
        p_j = poses[j].translation
        # Shift the moment reference point inward to joint j.
        moment = moment + np.cross(point - p_j, force)
        point = p_j
        # Add this link's own weight (point mass at its COM).
        com = poses[j].transform(arm.link_coms[j])
        f_link = arm.link_masses[j] * arm.gravity
        moment = moment + np.cross(com - p_j, f_link)
        force = force + f_link
        z = poses[j].rotation @ arm.joint_axes[j]
        tau[j] = -float(np.dot(moment, z))
    return tau


def free_motion_torques(
    arm: ArmModel,
    q: np.ndarray,
    *,
    poses: list[Pose] | None = None,
    check_limits: bool = True,
) -> np.ndarray:
    """Static torques with no end-effector load (link weights only)."""
    return static_joint_torques(
        arm, q, None, poses=poses, check_limits=check_limits
    )


def loaded_torques(
    arm: ArmModel,
    q: np.ndarray,
    obj: ObjectSpec,
    *,
    poses: list[Pose] | None = None,
    check_limits: bool = True,
) -> np.ndarray:
    """Convenience: static torques while carrying a payload."""
    if poses is None:
        poses = forward_kinematics(arm, q, check_limits=check_limits)
    w = object_wrench(arm, q, obj, poses=poses)
    return static_joint_torques(arm, q, w, poses=poses, check_limits=check_limits)
