"""Experiment configuration: YAML schema, validation, hashing, stage seeds.

A config file fully determines a run: arm description (referenced file),
controller parameters, object roster, dataset sizes, training schedules,
identification settings, and the continuous-trajectory script. The master
seed must be explicit — nothing falls back to wall-clock entropy. Every
output artifact embeds `config_hash`, a digest of the fully resolved
configuration (arm file contents included, output directory excluded).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .arm import ArmModel, arm_from_dict, arm_to_dict, forward_kinematics
from .attention_model import AttentionSchedule
from .errors import ConfigError
from .sim import ControllerSpec, controller_from_dict, controller_to_dict
from .statics import ObjectSpec
from .torque_model import TrainSchedule

STAGE_INDEX = {
    "train_data": 0,
    "test_data": 1,
    "torque": 2,
    "attention": 3,
    "identify": 4,
    "continuous": 5,
}


@dataclass
class ObjectConfig:
    """A named payload; test objects also declare their bounding extents."""

    name: str
    spec: ObjectSpec
    extents: np.ndarray | None = None

    @property
    def com_scale(self) -> float:
        """Length of the enclosing cuboid's diagonal (COM error scale)."""
        if self.extents is None:
            raise ConfigError(f"object {self.name!r} declares no extents")
        return float(np.linalg.norm(self.extents))


@dataclass
class ContinuousSpec:
    """Scripted switching-payload trajectory."""

    masses: list
    com_tag: np.ndarray
    segment_length: int
    waypoint_every: int
    window: int
    filter_width: int


@dataclass
class ExperimentConfig:
    arm: ArmModel
    controller: ControllerSpec
    training_objects: list
    test_objects: list
    grid_step_deg: float
    grid_ranges_deg: list | None
    feasible_spec: dict | None
    random_per_object: int
    test_random_per_object: int
    torque_schedule: TrainSchedule
    attention_schedule: AttentionSchedule
    ident_window: int
    ident_repeats: int
    condition_cap: float
    mass_floor: float
    continuous: ContinuousSpec
    seed: int
    out_dir: Path
    config_hash: str

    def feasibility_predicate(self):
        """Callable q -> bool from the declared rule, or None."""
        if self.feasible_spec is None:
            return None
        kind = self.feasible_spec.get("type")
        if kind == "min_ee_height":
            z_min = float(self.feasible_spec["z_min"])
            arm = self.arm

            def predicate(q):
                poses = forward_kinematics(arm, q, check_limits=False)
                return poses[arm.n_joints].translation[2] >= z_min

            return predicate
        raise ConfigError(f"unknown feasibility rule: {kind!r}")

    def stage_seed(self, stage: str) -> np.random.SeedSequence:
        """Deterministic per-stage seed derived from the master seed."""
        if stage not in STAGE_INDEX:
            raise ValueError(f"unknown stage: {stage!r}")
        return np.random.SeedSequence(self.seed, spawn_key=(STAGE_INDEX[stage],))


def _objects_from_list(entries, *, require_extents: bool) -> list:
    objects = []
    for entry in entries:
        try:
            name = str(entry["name"])
            spec = ObjectSpec(float(entry["mass"]),
                              np.asarray(entry["com_tag"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed object entry {entry!r}: {exc}") from exc
        extents = None
        if "extents" in entry:
            extents = np.asarray(entry["extents"], dtype=float)
            if extents.shape != (3,) or np.any(extents <= 0):
                raise ConfigError(f"object {name!r}: extents must be 3 positive values")
        elif require_extents:
            raise ConfigError(f"test object {name!r} must declare extents")
        objects.append(ObjectConfig(name=name, spec=spec, extents=extents))
    names = [o.name for o in objects]
    if len(set(names)) != len(names):
        raise ConfigError("object names must be unique")
    return objects


def _load_yaml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at top level")
    return data


def config_digest(resolved: dict) -> str:
    return hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode()
    ).hexdigest()


def load_config(path, *, seed_override=None, out_dir_override=None) -> ExperimentConfig:
    """Load and validate an experiment config; resolves the arm file.

    ``seed_override`` replaces the config's seed before hashing, so a run
    with an overridden seed hashes as if the file declared that seed.
    ``out_dir_override`` only redirects artifacts; it never affects the hash.
    """
    path = Path(path)
    raw = _load_yaml(path)
    if "seed" not in raw:
        raise ConfigError("config must set an explicit seed")
    try:
        seed = int(raw["seed"]) if seed_override is None else int(seed_override)
        arm_file = (path.parent / raw["arm_file"]).resolve()
        arm = arm_from_dict(_load_yaml(arm_file))
        controller = controller_from_dict(raw["controller"], arm.n_joints)
        objects_raw = raw["objects"]
        training_objects = _objects_from_list(
            objects_raw["training"], require_extents=False
        )
        test_objects = _objects_from_list(objects_raw["testing"], require_extents=True)
        dataset = raw["dataset"]
        grid_step_deg = float(dataset["grid_step_deg"])
        grid_ranges_deg = dataset.get("grid_ranges_deg")
        feasible_spec = dataset.get("feasible")
        random_per_object = int(dataset["random_per_object"])
        test_random_per_object = int(dataset["test_random_per_object"])
        training = raw["training"]
        torque_schedule = TrainSchedule(**training["torque"])
        attention_schedule = AttentionSchedule(**training["attention"])
        ident = raw["identification"]
        ident_window = int(ident["window"])
        ident_repeats = int(ident["repeats"])
        condition_cap = float(ident.get("condition_cap", 1e10))
        mass_floor = float(ident.get("mass_floor", 1e-4))
        cont = raw["continuous"]
        continuous = ContinuousSpec(
            masses=[float(m) for m in cont["masses"]],
            com_tag=np.asarray(cont["com_tag"], dtype=float),
            segment_length=int(cont["segment_length"]),
            waypoint_every=int(cont.get("waypoint_every", 40)),
            window=int(cont["window"]),
            filter_width=int(cont["filter_width"]),
        )
        out_dir = Path(out_dir_override if out_dir_override is not None
                       else raw["out_dir"])
    except KeyError as exc:
        raise ConfigError(f"config missing key: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config value: {exc}") from exc
    if not training_objects:
        raise ConfigError("need at least one training object")
    if not test_objects:
        raise ConfigError("need at least one test object")
    if ident_window < 1 or ident_repeats < 1:
        raise ConfigError("identification window and repeats must be >= 1")
    if min(continuous.masses) < 0 or continuous.segment_length < 1:
        raise ConfigError("continuous script needs non-negative masses and a length")

    resolved = {
        "seed": seed,
        "arm": arm_to_dict(arm),
        "controller": controller_to_dict(controller),
        "objects": {
            "training": [
                {"name": o.name, "mass": o.spec.mass, "com_tag": o.spec.com_tag.tolist()}
                for o in training_objects
            ],
            "testing": [
                {
                    "name": o.name,
                    "mass": o.spec.mass,
                    "com_tag": o.spec.com_tag.tolist(),
                    "extents": o.extents.tolist(),
                }
                for o in test_objects
            ],
        },
        "dataset": {
            "grid_step_deg": grid_step_deg,
            "grid_ranges_deg": grid_ranges_deg,
            "feasible": feasible_spec,
            "random_per_object": random_per_object,
            "test_random_per_object": test_random_per_object,
        },
        "training": {
            "torque": {
                "batch_size": torque_schedule.batch_size,
                "epochs": torque_schedule.epochs,
                "lr": torque_schedule.lr,
                "average_tail": torque_schedule.average_tail,
            },
            "attention": {
                "batch_size": attention_schedule.batch_size,
                "epochs": attention_schedule.epochs,
                "lr": attention_schedule.lr,
                "mass_weight": attention_schedule.mass_weight,
                "com_weight": attention_schedule.com_weight,
                "window": attention_schedule.window,
                "windows_per_object": attention_schedule.windows_per_object,
            },
        },
        "identification": {
            "window": ident_window,
            "repeats": ident_repeats,
            "condition_cap": condition_cap,
            "mass_floor": mass_floor,
        },
        "continuous": {
            "masses": continuous.masses,
            "com_tag": continuous.com_tag.tolist(),
            "segment_length": continuous.segment_length,
            "waypoint_every": continuous.waypoint_every,
            "window": continuous.window,
            "filter_width": continuous.filter_width,
        },
    }
    return ExperimentConfig(
        arm=arm,
        controller=controller,
        training_objects=training_objects,
        test_objects=test_objects,
        grid_step_deg=grid_step_deg,
        grid_ranges_deg=grid_ranges_deg,
        feasible_spec=feasible_spec,
        random_per_object=random_per_object,
        test_random_per_object=test_random_per_object,
        torque_schedule=torque_schedule,
        attention_schedule=attention_schedule,
        ident_window=ident_window,
        ident_repeats=ident_repeats,
        condition_cap=condition_cap,
        mass_floor=mass_floor,
        continuous=continuous,
        seed=seed,
        out_dir=out_dir,
        config_hash=config_digest(resolved),
    )
