"""Serial-arm geometry: rigid poses, forward kinematics, end-effector Jacobian.

Kinematic convention is axis-offset: every joint carries a fixed rigid
transform from the parent joint frame to its own frame (declared at zero
angle), followed by a rotation about a fixed unit axis expressed in the
joint's own frame. The frame chain is joint 1 ... joint N, end-effector, tag.

Arm descriptions are loaded from YAML/dict configs; see `arm_from_dict` for
the schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

AXIS_UNIT_TOL = 1e-12
ROTATION_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of v, so that skew(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    k = skew(np.asarray(axis, dtype=float))
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_defect(rot: np.ndarray) -> float:
    """How far `rot` is from a proper rotation (orthonormality + det 1)."""
    return max(
        float(np.abs(rot.T @ rot - np.eye(3)).max()),
        abs(float(np.linalg.det(rot)) - 1.0),
    )


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation from roll/pitch/yaw (radians): Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    rx = rotation_about_axis(np.array([1.0, 0.0, 0.0]), roll)
    ry = rotation_about_axis(np.array([0.0, 1.0, 0.0]), pitch)
    rz = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw)
    return rz @ ry @ rx


@dataclass
class Pose:
    """Rigid transform: a 3x3 rotation plus a translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("Pose needs a 3x3 rotation and a 3-vector translation")
        if rotation_defect(self.rotation) > ROTATION_TOL:
            raise ValueError("Pose rotation is not orthonormal with det +1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied first is the outer frame: result maps other's frame to self's parent."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


@dataclass
class ArmModel:
    """Geometric and inertial description of an N-DOF serial arm.

    joint_axes:    (N, 3) unit rotation axis of each joint, in its own frame.
    link_offsets:  fixed transform from parent joint frame to joint frame at
                   zero angle, one per joint.
    link_masses:   (N,) kg; the link actuated by joint j is treated as a point
                   mass at link_coms[j] (expressed in joint j's frame).
    ee_offset:     last joint frame -> end-effector frame.
    tag_offset:    end-effector frame -> tag frame.
    gravity:       (3,) m/s^2 in the base frame.
    joint_limits:  (N, 2) [lo, hi] radians.
    """

    joint_axes: np.ndarray
    link_offsets: list[Pose]
    link_masses: np.ndarray
    link_coms: np.ndarray
    ee_offset: Pose
    tag_offset: Pose
    gravity: np.ndarray
    joint_limits: np.ndarray

    def __post_init__(self):
        self.joint_axes = np.asarray(self.joint_axes, dtype=float)
        self.link_masses = np.asarray(self.link_masses, dtype=float)
        self.link_coms = np.asarray(self.link_coms, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        n = self.joint_axes.shape[0]
        if n < 1:
            raise ConfigError("arm needs at least one joint")
        if self.joint_axes.shape != (n, 3):
            raise ConfigError("joint_axes must be (N, 3)")
        norms = np.linalg.norm(self.joint_axes, axis=1)
        if np.any(np.abs(norms - 1.0) > AXIS_UNIT_TOL):
            raise ConfigError("every joint axis must have unit norm")
        if len(self.link_offsets) != n:
            raise ConfigError("need one link offset per joint")
        if self.link_masses.shape != (n,) or np.any(self.link_masses < 0):
            raise ConfigError("link masses must be (N,) and non-negative")
        if self.link_coms.shape != (n, 3):
            raise ConfigError("link_coms must be (N, 3)")
        if self.gravity.shape != (3,):
            raise ConfigError("gravity must be a 3-vector")
        if self.joint_limits.shape != (n, 2) or np.any(
            self.joint_limits[:, 0] >= self.joint_limits[:, 1]
        ):
            raise ConfigError("joint_limits must be (N, 2) with lo < hi")

    @property
    def n_joints(self) -> int:
        return self.joint_axes.shape[0]


def _check_q(arm: ArmModel, q: np.ndarray, check_limits: bool) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (arm.n_joints,):
        raise ValueError(f"expected {arm.n_joints} joint angles, got shape {q.shape}")
    if check_limits:
        lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
        bad = (q < lo - 1e-12) | (q > hi + 1e-12)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise ValueError(
                f"joint {j + 1} angle {q[j]:.6f} rad outside limits "
                f"[{lo[j]:.6f}, {hi[j]:.6f}]"
            )
    return q


def forward_kinematics(
    arm: ArmModel, q: np.ndarray, *, check_limits: bool = True
) -> list[Pose]:
    """Base-frame poses of every joint frame, the end-effector, and the tag.

    Returns N + 2 poses: joints 1..N, then end-effector, then tag.
    """
    q = _check_q(arm, q, check_limits)
    poses: list[Pose] = []
    current = Pose.identity()
    for j in range(arm.n_joints):
        current = current.compose(arm.link_offsets[j])
        current = Pose(
            current.rotation @ rotation_about_axis(arm.joint_axes[j], q[j]),
            current.translation,
        )
        poses.append(current)
    ee = current.compose(arm.ee_offset)
    poses.append(ee)
    poses.append(ee.compose(arm.tag_offset))
    return poses


def jacobian(
    arm: ArmModel,
    q: np.ndarray,
    *,
    poses: list[Pose] | None = None,
    check_limits: bool = True,
) -> np.ndarray:
    """6xN Jacobian at the end-effector, base frame (rows 1-3 linear, 4-6 angular).

    Column j is [z_j x (p_ee - p_j); z_j] with z_j the joint axis in the base
    frame and p_j the joint origin.
    """
    if poses is None:
        poses = forward_kinematics(arm, q, check_limits=check_limits)
    p_ee = poses[arm.n_joints].translation
    jac = np.zeros((6, arm.n_joints))
    for j in range(arm.n_joints):
        z = poses[j].rotation @ arm.joint_axes[j]
        jac[:3, j] = np.cross(z, p_ee - poses[j].translation)
        jac[3:, j] = z
    return jac


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def _pose_from_dict(d: dict | None) -> Pose:
    """Pose from {'translation': [x,y,z], 'rpy_deg': [r,p,y]}; both optional."""
    if d is None:
        return Pose.identity()
    translation = np.asarray(d.get("translation", [0.0, 0.0, 0.0]), dtype=float)
    rpy = np.radians(np.asarray(d.get("rpy_deg", [0.0, 0.0, 0.0]), dtype=float))
    return Pose(rpy_matrix(*rpy), translation)


def arm_from_dict(d: dict) -> ArmModel:
    """Build an ArmModel from a config dict.

    Schema::

        gravity: [0.0, 0.0, -9.81]          # m/s^2, base frame
        joints:                              # in order, base to tip
          - axis: [1, 0, 0]                  # unit vector, joint's own frame
            offset: {translation: [0, 0, 0.06], rpy_deg: [0, 0, 0]}
            mass: 0.13                       # kg, point mass of the link
            com: [0.0, 0.0, 0.065]           # m, in the joint frame
            limits_deg: [-90, 90]
        ee_offset: {translation: [0.13, 0, 0]}
        tag_offset: {translation: [0, 0, 0.03]}
    """
    try:
        joints = d["joints"]
        if not joints:
            raise ConfigError("arm config has no joints")
        axes = np.array([j["axis"] for j in joints], dtype=float)
        offsets = [_pose_from_dict(j.get("offset")) for j in joints]
        masses = np.array([j["mass"] for j in joints], dtype=float)
        coms = np.array([j["com"] for j in joints], dtype=float)
        limits = np.radians(np.array([j["limits_deg"] for j in joints], dtype=float))
        return ArmModel(
            joint_axes=axes,
            link_offsets=offsets,
            link_masses=masses,
            link_coms=coms,
            ee_offset=_pose_from_dict(d.get("ee_offset")),
            tag_offset=_pose_from_dict(d.get("tag_offset")),
            gravity=np.asarray(d["gravity"], dtype=float),
            joint_limits=limits,
        )
    except KeyError as exc:
        raise ConfigError(f"arm config missing key: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed arm config: {exc}") from exc


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": pose.rotation.tolist(),
        "translation": pose.translation.tolist(),
    }


def arm_to_dict(arm: ArmModel) -> dict:
    """Canonical (fully numeric) dict form, used for hashing and manifests."""
    return {
        "joint_axes": arm.joint_axes.tolist(),
        "link_offsets": [_pose_to_dict(p) for p in arm.link_offsets],
        "link_masses": arm.link_masses.tolist(),
        "link_coms": arm.link_coms.tolist(),
        "ee_offset": _pose_to_dict(arm.ee_offset),
        "tag_offset": _pose_to_dict(arm.tag_offset),
        "gravity": arm.gravity.tolist(),
        "joint_limits": arm.joint_limits.tolist(),
    }


def arm_hash(arm: ArmModel) -> str:
    blob = json.dumps(arm_to_dict(arm), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
