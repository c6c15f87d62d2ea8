"""Shared fixtures.

The expensive fixture is `desk_pipeline`: it runs the whole desk-scale
pipeline (data generation, both trainings, evaluation, continuous tracking)
once per session through the same entry points the CLI uses, into a temp
directory. Individual acceptance checks read from it so the suite trains
each model exactly once.
"""

import json
import os
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from payloadid import cli
from payloadid.arm import ArmModel, Pose, arm_from_dict, rpy_matrix
from payloadid.attention_model import attention_model_from_dict
from payloadid.config import load_config
from payloadid.sim import read_dataset
from payloadid.torque_model import torque_model_from_dict

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"{status} criterion {number:2d}: {detail}")


@pytest.fixture(scope="session")
def desk_arm() -> ArmModel:
    return arm_from_dict(
        yaml.safe_load((CONFIG_DIR / "desk_arm.yaml").read_text())
    )


def planar_arm(lengths, masses=None, axis=(0.0, 0.0, 1.0)):
    """N-link planar arm: every joint about `axis`, links along local x."""
    n = len(lengths)
    masses = [0.0] * n if masses is None else list(masses)
    offsets = [Pose.identity()]
    offsets += [Pose(np.eye(3), np.array([l, 0.0, 0.0])) for l in lengths[:-1]]
    return ArmModel(
        joint_axes=np.tile(np.asarray(axis, dtype=float), (n, 1)),
        link_offsets=offsets,
        link_masses=np.asarray(masses, dtype=float),
        link_coms=np.array([[l / 2, 0.0, 0.0] for l in lengths]),
        ee_offset=Pose(np.eye(3), np.array([lengths[-1], 0.0, 0.0])),
        tag_offset=Pose.identity(),
        gravity=np.array([0.0, 0.0, -9.81]),
        joint_limits=np.tile([-np.pi, np.pi], (n, 1)),
    )


@pytest.fixture
def two_link():
    return planar_arm([0.3, 0.2])


def pendulum_arm(com=(0.1, 0.0, 0.0), mass=0.1, gravity=(0.0, 0.0, -9.81)):
    """Single joint about y at the origin with one point-mass link."""
    return ArmModel(
        joint_axes=np.array([[0.0, 1.0, 0.0]]),
        link_offsets=[Pose.identity()],
        link_masses=np.array([mass]),
        link_coms=np.array([com]),
        ee_offset=Pose(np.eye(3), np.array([0.1, 0.0, 0.0])),
        tag_offset=Pose.identity(),
        gravity=np.asarray(gravity, dtype=float),
        joint_limits=np.array([[-np.pi, np.pi]]),
    )


def run_stage(timings, name, fn, *args, **kwargs):
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    timings[name] = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def desk_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_run")
    config = load_config(CONFIG_DIR / "desk.yaml", out_dir_override=out)
    timings = {}
    workers = min(4, os.cpu_count() or 1)
    run_stage(timings, "gen_data", cli.cmd_gen_data, config, workers=workers)
    run_stage(timings, "torque", cli.cmd_train, config, "torque")
    run_stage(timings, "attention", cli.cmd_train, config, "attention")
    run_stage(timings, "eval", cli.cmd_eval, config,
              config.ident_window, config.ident_repeats)
    run_stage(timings, "continuous", cli.cmd_continuous, config)

    _, train_samples = read_dataset(out / "train.jsonl")
    _, test_samples = read_dataset(out / "test.jsonl")
    torque_model = torque_model_from_dict(
        json.loads((out / "torque_model.json").read_text())
    )
    attention_model, _ = attention_model_from_dict(
        json.loads((out / "attention_model.json").read_text())
    )
    return SimpleNamespace(
        config=config,
        out=out,
        timings=timings,
        train_samples=train_samples,
        test_samples=test_samples,
        torque_model=torque_model,
        attention_model=attention_model,
    )


def read_csv_rows(path: Path):
    """Rows of one of our CSV artifacts, skipping the hash comment line."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split(",")
    return header, [line.split(",") for line in lines[2:]]
