"""Synthetic steady-state data generation.

A proportional-gain controller holding a joint against a static load settles
where actuator torque balances external torque plus friction, which makes the
encoder discrepancy q_d - q proportional to the held torque. This module
solves that equilibrium per commanded configuration, corrupts the readings
with configured noise, and emits labeled samples: the exact external torques
and free-motion torques (labels), the measured joint angles (inputs), and a
simulated noisy torque-sensor channel (for the sensor baseline).

Datasets are plain line-delimited JSON: one header record, then one sample
per line. Floats round-trip exactly, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import itertools
import json
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import ArmModel, Pose, forward_kinematics
from .errors import ConfigError, ConvergenceError, DataError
from .statics import ObjectSpec, free_motion_torques, loaded_torques

EQUILIBRIUM_TOL = 1e-10
MAX_EQUILIBRIUM_ITERS = 200


def _per_joint(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} must be a scalar or length-{n} vector")
    return arr


@dataclass
class ControllerSpec:
    """Per-joint controller and disturbance parameters.

    kp: proportional gain (N*m/rad). friction_coulomb plus
    friction_position_gain*|sin q| is the friction magnitude, applied against
    the rotation direction. encoder_noise_sd corrupts the reported q;
    sensor_bias and sensor_noise_sd corrupt the simulated torque-sensor
    channel. Scalars broadcast to all joints.
    """

    kp: np.ndarray
    friction_coulomb: np.ndarray
    friction_position_gain: np.ndarray
    encoder_noise_sd: np.ndarray
    sensor_noise_sd: np.ndarray
    sensor_bias: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.kp, dtype=float).reshape(-1).shape[0]
        self.kp = _per_joint(self.kp, n, "kp")
        self.friction_coulomb = _per_joint(self.friction_coulomb, n, "friction_coulomb")
        self.friction_position_gain = _per_joint(
            self.friction_position_gain, n, "friction_position_gain"
        )
        self.encoder_noise_sd = _per_joint(self.encoder_noise_sd, n, "encoder_noise_sd")
        self.sensor_noise_sd = _per_joint(self.sensor_noise_sd, n, "sensor_noise_sd")
        self.sensor_bias = _per_joint(self.sensor_bias, n, "sensor_bias")
        if np.any(self.kp <= 0):
            raise ConfigError("kp must be strictly positive per joint")
        for name in ("friction_coulomb", "friction_position_gain",
                     "encoder_noise_sd", "sensor_noise_sd"):
            if np.any(getattr(self, name) < 0):
                raise ConfigError(f"{name} must be non-negative")

    @property
    def n_joints(self) -> int:
        return self.kp.shape[0]


def controller_from_dict(d: dict, n_joints: int) -> ControllerSpec:
    try:
        return ControllerSpec(
            kp=_per_joint(d["kp"], n_joints, "kp"),
            friction_coulomb=_per_joint(
                d.get("friction_coulomb", 0.0), n_joints, "friction_coulomb"
            ),
            friction_position_gain=_per_joint(
                d.get("friction_position_gain", 0.0), n_joints,
                "friction_position_gain",
            ),
            encoder_noise_sd=_per_joint(
                d.get("encoder_noise_sd", 0.0), n_joints, "encoder_noise_sd"
            ),
            sensor_noise_sd=_per_joint(
                d.get("sensor_noise_sd", 0.0), n_joints, "sensor_noise_sd"
            ),
            sensor_bias=_per_joint(d.get("sensor_bias", 0.0), n_joints, "sensor_bias"),
        )
    except KeyError as exc:
        raise ConfigError(f"controller config missing key: {exc}") from exc


def controller_to_dict(controller: ControllerSpec) -> dict:
    return {
        "kp": controller.kp.tolist(),
        "friction_coulomb": controller.friction_coulomb.tolist(),
        "friction_position_gain": controller.friction_position_gain.tolist(),
        "encoder_noise_sd": controller.encoder_noise_sd.tolist(),
        "sensor_noise_sd": controller.sensor_noise_sd.tolist(),
        "sensor_bias": controller.sensor_bias.tolist(),
    }


@dataclass
class SteadySample:
    """One settled observation of the arm holding a (possibly absent) payload.

    q is the noisy measured angle vector; tau_true / tau_g are the exact
    loaded and free-motion torques at the true settled configuration, and
    tag_pose is the true tag pose there (the tag channel is noise-free).
    """

    q_d: np.ndarray
    q: np.ndarray
    rot_dir: np.ndarray
    tag_pose: Pose
    tau_true: np.ndarray
    tau_g: np.ndarray
    tau_sensor_raw: np.ndarray
    object_id: str
    object: ObjectSpec

    def __post_init__(self):
        self.q_d = np.asarray(self.q_d, dtype=float)
        n = self.q_d.shape[0]
        for name in ("q", "rot_dir", "tau_true", "tau_g", "tau_sensor_raw"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if not np.all(np.abs(self.rot_dir) == 1.0):
            raise ValueError("rot_dir entries must be exactly +1 or -1")

    @property
    def n_joints(self) -> int:
        return self.q_d.shape[0]


def friction_torque(controller: ControllerSpec, q: np.ndarray) -> np.ndarray:
    """Friction magnitude per joint at configuration q (always >= 0)."""
    return controller.friction_coulomb + controller.friction_position_gain * np.abs(
        np.sin(q)
    )


def _external_torques(arm, q, obj, poses=None):
    if obj is None or obj.mass == 0.0:
        return free_motion_torques(arm, q, poses=poses, check_limits=False)
    return loaded_torques(arm, q, obj, poses=poses, check_limits=False)


def steady_state(
    arm: ArmModel,
    controller: ControllerSpec,
    q_d: np.ndarray,
    rot_dir: np.ndarray,
    obj: ObjectSpec | None,
    rng: np.random.Generator,
    *,
    object_id: str = "",
) -> SteadySample:
    """Settle the arm at commanded q_d and emit one labeled sample.

    Solves kp*(q_d - q) = tau_ext(q) + rot_dir*friction(q) per joint by
    fixed-point iteration q <- q_d - (tau_ext + rot_dir*friction)/kp,
    starting from q_d. Measurement noise is drawn only after convergence,
    encoder noise first, then sensor noise.
    """
    q_d = np.asarray(q_d, dtype=float)
    rot_dir = np.asarray(rot_dir, dtype=float)
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    if np.any(q_d < lo - 1e-12) or np.any(q_d > hi + 1e-12):
        raise ValueError("commanded position outside joint limits")

    q = q_d.copy()
    for _ in range(MAX_EQUILIBRIUM_ITERS):
        tau_ext = _external_torques(arm, q, obj)
        q_next = q_d - (
            tau_ext + rot_dir * friction_torque(controller, q)
        ) / controller.kp
        if np.max(np.abs(q_next - q)) < EQUILIBRIUM_TOL:
            q = q_next
            break
        q = q_next
    else:
        raise ConvergenceError(
            f"equilibrium did not converge within {MAX_EQUILIBRIUM_ITERS} "
            f"iterations at q_d={np.array2string(q_d, precision=4)}; "
            "kp is likely too small for the load"
        )

    poses = forward_kinematics(arm, q, check_limits=False)
    tau_true = _external_torques(arm, q, obj, poses=poses)
    tau_g = free_motion_torques(arm, q, poses=poses, check_limits=False)
    tag_pose = poses[arm.n_joints + 1]
    q_measured = q + rng.normal(0.0, 1.0, arm.n_joints) * controller.encoder_noise_sd
    tau_sensor_raw = (
        tau_true
        + rot_dir * friction_torque(controller, q)
        + controller.sensor_bias
        + rng.normal(0.0, 1.0, arm.n_joints) * controller.sensor_noise_sd
    )
    return SteadySample(
        q_d=q_d,
        q=q_measured,
        rot_dir=rot_dir,
        tag_pose=tag_pose,
        tau_true=tau_true,
        tau_g=tau_g,
        tau_sensor_raw=tau_sensor_raw,
        object_id=object_id,
        object=obj if obj is not None else ObjectSpec(0.0, np.zeros(3)),
    )


# ---------------------------------------------------------------------------
# Dataset generators
# ---------------------------------------------------------------------------

def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _simulate_chunk(args):
    arm, controller, jobs = args
    results = []
    for (q_d, rot_dir, obj, object_id), child_seq in jobs:
        rng = np.random.default_rng(child_seq)
        results.append(
            steady_state(arm, controller, q_d, rot_dir, obj, rng,
                         object_id=object_id)
        )
    return results


def simulate_commands(
    arm: ArmModel,
    controller: ControllerSpec,
    commands: list,
    seed,
    *,
    workers: int = 1,
) -> list:
    """Run steady_state over a command list, one spawned stream per command.

    Because every command carries its own child stream, the output depends
    only on the seed — never on the worker count or scheduling — so parallel
    runs reproduce the workers=1 bytes exactly.
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    seq = _as_seed_sequence(seed)
    jobs = list(zip(commands, seq.spawn(len(commands))))
    if workers == 1 or len(commands) <= 1:
        return _simulate_chunk((arm, controller, jobs))
    chunks = [
        (arm, controller, [jobs[i] for i in idx])
        for idx in np.array_split(np.arange(len(jobs)), workers)
        if len(idx)
    ]
    with multiprocessing.Pool(processes=workers) as pool:
        chunk_results = pool.map(_simulate_chunk, chunks)
    return [sample for chunk in chunk_results for sample in chunk]


def grid_positions(
    arm: ArmModel,
    grid_deg: float,
    *,
    ranges_deg=None,
    feasible=None,
) -> list:
    """Joint-space grid positions at a fixed angular step, optionally filtered.

    ranges_deg defaults to the arm's joint limits and must lie within them;
    the step must divide every range exactly. `feasible` is an optional
    predicate on q (radians) that drops unreachable/colliding configurations.
    """
    if grid_deg <= 0:
        raise ConfigError("grid step must be positive")
    step = np.radians(grid_deg)
    if ranges_deg is None:
        ranges = arm.joint_limits.copy()
    else:
        ranges = np.radians(np.asarray(ranges_deg, dtype=float))
        if ranges.shape != (arm.n_joints, 2):
            raise ConfigError("grid ranges must be (N, 2) degrees")
        if np.any(ranges[:, 0] < arm.joint_limits[:, 0] - 1e-9) or np.any(
            ranges[:, 1] > arm.joint_limits[:, 1] + 1e-9
        ):
            raise ConfigError("grid ranges must lie within joint limits")
    axes = []
    for j in range(arm.n_joints):
        span = ranges[j, 1] - ranges[j, 0]
        count = span / step
        if abs(count - round(count)) > 1e-9:
            raise ConfigError(
                f"grid step {grid_deg} deg does not divide joint {j + 1}'s range"
            )
        axes.append(np.linspace(ranges[j, 0], ranges[j, 1], int(round(count)) + 1))
    positions = [np.array(combo) for combo in itertools.product(*axes)]
    if feasible is not None:
        positions = [q for q in positions if feasible(q)]
    if not positions:
        raise ConfigError("grid produced no feasible positions")
    return positions


def direction_vectors(n_joints: int) -> list:
    """All 2^N rotation-direction sign vectors, in a fixed order."""
    return [
        np.array(combo, dtype=float)
        for combo in itertools.product((1.0, -1.0), repeat=n_joints)
    ]


def generate_planning_grid(
    arm: ArmModel,
    controller: ControllerSpec,
    objects: list,
    grid_deg: float,
    seed,
    *,
    ranges_deg=None,
    feasible=None,
    workers: int = 1,
) -> list:
    """Grid positions x all direction combinations x objects, simulated.

    `objects` is a list of (object_id, ObjectSpec) pairs; a zero-mass spec
    represents free motion.
    """
    positions = grid_positions(arm, grid_deg, ranges_deg=ranges_deg, feasible=feasible)
    dirs = direction_vectors(arm.n_joints)
    commands = [
        (pos, d, spec, object_id)
        for pos in positions
        for d in dirs
        for object_id, spec in objects
    ]
    return simulate_commands(arm, controller, commands, seed, workers=workers)


def generate_random_samples(
    arm: ArmModel,
    controller: ControllerSpec,
    objects: list,
    count_per_object: int,
    seed,
    *,
    workers: int = 1,
) -> list:
    """Uniform random commanded positions and directions, per object.

    The command list is drawn from its own stream before simulation, so it is
    identical for every worker count.
    """
    if count_per_object < 0:
        raise ConfigError("count_per_object must be >= 0")
    seq = _as_seed_sequence(seed)
    command_seq, sim_seq = seq.spawn(2)
    cmd_rng = np.random.default_rng(command_seq)
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    commands = []
    for object_id, spec in objects:
        for _ in range(count_per_object):
            q_d = cmd_rng.uniform(lo, hi)
            rot_dir = cmd_rng.integers(0, 2, arm.n_joints) * 2.0 - 1.0
            commands.append((q_d, rot_dir, spec, object_id))
    return simulate_commands(arm, controller, commands, sim_seq, workers=workers)


def generate_switching_trajectory(
    arm: ArmModel,
    controller: ControllerSpec,
    segments: list,
    seed,
    *,
    waypoint_every: int = 40,
) -> list:
    """One continuous commanded path along which the hidden payload switches.

    `segments` is a list of (object_id, ObjectSpec, length); the commanded
    path interpolates random waypoints and does not restart at switches, so
    consecutive-sample windows straddle them. Rotation directions follow the
    sign of the commanded increments.
    """
    total = sum(length for _, _, length in segments)
    if total <= 0:
        raise DataError("switching trajectory needs at least one sample")
    if waypoint_every < 1:
        raise ConfigError("waypoint_every must be >= 1")
    seq = _as_seed_sequence(seed)
    path_seq, sim_seq = seq.spawn(2)
    path_rng = np.random.default_rng(path_seq)
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    n_way = total // waypoint_every + 2
    waypoints = path_rng.uniform(lo, hi, size=(n_way, arm.n_joints))
    q_path = np.empty((total, arm.n_joints))
    for t in range(total):
        k, frac = divmod(t, waypoint_every)
        alpha = frac / waypoint_every
        q_path[t] = (1.0 - alpha) * waypoints[k] + alpha * waypoints[k + 1]

    rng = np.random.default_rng(sim_seq)
    samples = []
    prev_dir = np.ones(arm.n_joints)
    t = 0
    for object_id, spec, length in segments:
        for _ in range(length):
            # Direction of the motion that brought the joint here.
            if t == 0:
                step = q_path[1] - q_path[0] if total > 1 else np.zeros(arm.n_joints)
            else:
                step = q_path[t] - q_path[t - 1]
            rot_dir = np.where(step > 0, 1.0, np.where(step < 0, -1.0, prev_dir))
            prev_dir = rot_dir
            samples.append(
                steady_state(
                    arm, controller, q_path[t], rot_dir, spec, rng,
                    object_id=object_id,
                )
            )
            t += 1
    return samples


def make_inference_windows(
    samples: list,
    window: int,
    draws: int | None = None,
    rng: np.random.Generator | None = None,
    mode: str = "random",
) -> list:
    """Windows of samples for identification.

    random mode: `draws` windows of `window` samples each, drawn without
    replacement inside a window. trajectory mode: every consecutive block of
    `window` samples, in order.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > len(samples):
        raise DataError(
            f"window of {window} exceeds dataset size {len(samples)}"
        )
    if mode == "random":
        if draws is None or rng is None:
            raise ValueError("random mode needs draws and rng")
        return [
            [samples[i] for i in rng.choice(len(samples), size=window, replace=False)]
            for _ in range(draws)
        ]
    if mode == "trajectory":
        return [samples[i : i + window] for i in range(len(samples) - window + 1)]
    raise ValueError(f"unknown window mode: {mode!r}")


# ---------------------------------------------------------------------------
# Dataset files (line-delimited JSON)
# ---------------------------------------------------------------------------

def _pose_record(pose: Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def _pose_from_record(d: dict) -> Pose:
    return Pose(np.asarray(d["rotation"], dtype=float),
                np.asarray(d["translation"], dtype=float))


def sample_to_record(sample: SteadySample) -> dict:
    return {
        "q_d": sample.q_d.tolist(),
        "q": sample.q.tolist(),
        "rot_dir": [int(v) for v in sample.rot_dir],
        "tag_pose": _pose_record(sample.tag_pose),
        "tau_true": sample.tau_true.tolist(),
        "tau_g": sample.tau_g.tolist(),
        "tau_sensor_raw": sample.tau_sensor_raw.tolist(),
        "object_id": sample.object_id,
        "object": {"mass": sample.object.mass, "com_tag": sample.object.com_tag.tolist()},
    }


def sample_from_record(d: dict) -> SteadySample:
    try:
        return SteadySample(
            q_d=np.asarray(d["q_d"], dtype=float),
            q=np.asarray(d["q"], dtype=float),
            rot_dir=np.asarray(d["rot_dir"], dtype=float),
            tag_pose=_pose_from_record(d["tag_pose"]),
            tau_true=np.asarray(d["tau_true"], dtype=float),
            tau_g=np.asarray(d["tau_g"], dtype=float),
            tau_sensor_raw=np.asarray(d["tau_sensor_raw"], dtype=float),
            object_id=d["object_id"],
            object=ObjectSpec(float(d["object"]["mass"]),
                              np.asarray(d["object"]["com_tag"], dtype=float)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed sample record: {exc}") from exc


def write_dataset(path, samples: list, header: dict) -> None:
    """Write one header line plus one line per sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "header", **header}, sort_keys=True) + "\n")
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), sort_keys=True) + "\n")


def read_dataset(path):
    """Read a dataset file; returns (header dict, list of samples)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"dataset file is empty: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"bad dataset header: {exc}") from exc
    if header.get("kind") != "header":
        raise DataError("dataset file does not start with a header record")
    samples = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            samples.append(sample_from_record(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"bad sample record at line {i}: {exc}") from exc
    return header, samples
