"""Evaluation metrics, curve-fit baselines, and continuous force tracking.

Error metrics follow one convention: MAE is the mean absolute error in
physical units, NMAE and NRMSE divide by a quantity-specific positive scale
and report percent. COM errors are Euclidean distances between estimated and
true COM. By the power-mean inequality NRMSE >= NMAE always; every report
asserts it.

The two baselines mirror common practice: the sensor baseline linearly
corrects a (simulated) torque-sensor channel for friction and bias; the
position-error baseline maps the encoder discrepancy through a fitted
proportional gain with the same friction/bias correction. Both are per-joint
ordinary least squares on the training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import ArmModel
from .attention_model import AttentionModel, joint_weights_batch
from .errors import DataError
from .identify import solve_wls, stack_system
from .torque_model import TorqueModel, estimate_torque_batch

METRIC_TOL = 1e-12


@dataclass
class MetricReport:
    """MAE plus scale-normalized percent errors for one quantity."""

    quantity: str
    mae: float
    nmae_percent: float
    nrmse_percent: float
    scale: float

    def __post_init__(self):
        if self.mae < 0 or self.nmae_percent < -METRIC_TOL:
            raise ValueError("error metrics cannot be negative")
        if self.nrmse_percent < self.nmae_percent - METRIC_TOL:
            raise ValueError(
                f"{self.quantity}: NRMSE {self.nrmse_percent} fell below NMAE "
                f"{self.nmae_percent}; RMS of magnitudes cannot beat their mean"
            )


def compute_metrics(estimates, ground_truth, scale: float, quantity: str = "") -> MetricReport:
    """Error report for scalar estimates (K,) or COM-style vectors (K, 3).

    Vector inputs are scored by Euclidean distance per row. `scale` is the
    positive normalization value in the same units as the error.
    """
    estimates = np.asarray(estimates, dtype=float)
    ground_truth = np.asarray(ground_truth, dtype=float)
    if estimates.shape != ground_truth.shape or estimates.shape[0] == 0:
        raise ValueError("estimates and ground truth must be equal, non-empty shapes")
    if scale <= 0:
        raise ValueError(f"{quantity or 'metric'}: scale must be positive")
    diff = estimates - ground_truth
    errors = np.linalg.norm(diff, axis=1) if diff.ndim == 2 else np.abs(diff)
    mae = float(np.mean(errors))
    rmse = float(np.sqrt(np.mean(errors**2)))
    return MetricReport(
        quantity=quantity,
        mae=mae,
        nmae_percent=100.0 * mae / scale,
        nrmse_percent=100.0 * rmse / scale,
        scale=float(scale),
    )


# ---------------------------------------------------------------------------
# Curve-fit baselines
# ---------------------------------------------------------------------------

@dataclass
class BaselineParams:
    """Per-joint affine corrections fitted by ordinary least squares.

    kind "sensor": torque = tau_sensor_raw - rot_dir*friction + bias.
    kind "pe":     torque = p_gain*(q_d - q) - rot_dir*friction + bias.
    """

    kind: str
    friction: np.ndarray
    bias: np.ndarray
    p_gain: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sensor", "pe"):
            raise ValueError(f"unknown baseline kind: {self.kind!r}")
        arrays = [self.friction, self.bias]
        if self.kind == "pe":
            if self.p_gain is None:
                raise ValueError("pe baseline needs p_gain")
            arrays.append(self.p_gain)
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError("baseline parameters must be finite")


def _check_direction_variation(rot: np.ndarray) -> None:
    for j in range(rot.shape[1]):
        if np.all(rot[:, j] == rot[0, j]):
            raise DataError(
                f"joint {j + 1}: rotation-direction regressor is degenerate "
                "(every training sample rotates the same way)"
            )


def fit_baseline(kind: str, samples) -> BaselineParams:
    """Per-joint OLS fit of the named baseline on labeled samples."""
    if not samples:
        raise DataError("cannot fit a baseline on an empty dataset")
    if kind not in ("sensor", "pe"):
        raise ValueError(f"unknown baseline kind: {kind!r}")
    rot = np.array([s.rot_dir for s in samples])
    tau_true = np.array([s.tau_true for s in samples])
    _check_direction_variation(rot)
    n = rot.shape[1]
    friction = np.empty(n)
    bias = np.empty(n)
    gains = np.empty(n) if kind == "pe" else None
    if kind == "sensor":
        raw = np.array([s.tau_sensor_raw for s in samples])
    else:
        disc = np.array([s.q_d - s.q for s in samples])
    for j in range(n):
        if kind == "sensor":
            design = np.column_stack([-rot[:, j], np.ones(len(samples))])
            target = tau_true[:, j] - raw[:, j]
        else:
            design = np.column_stack(
                [disc[:, j], -rot[:, j], np.ones(len(samples))]
            )
            target = tau_true[:, j]
        coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        if rank < design.shape[1]:
            spreads = design.std(axis=0)
            names = (
                ["rotation-direction", "constant"]
                if kind == "sensor"
                else ["discrepancy", "rotation-direction", "constant"]
            )
            worst = names[int(np.argmin(spreads[:-1]))]
            raise DataError(
                f"joint {j + 1}: baseline design is rank deficient; the "
                f"{worst} regressor carries no variation"
            )
        if kind == "sensor":
            friction[j], bias[j] = coef
        else:
            gains[j], friction[j], bias[j] = coef
    return BaselineParams(kind=kind, friction=friction, bias=bias, p_gain=gains)


def predict_baseline_batch(params: BaselineParams, samples) -> np.ndarray:
    """(B, N) baseline torque estimates."""
    rot = np.array([s.rot_dir for s in samples])
    correction = -rot * params.friction + params.bias
    if params.kind == "sensor":
        raw = np.array([s.tau_sensor_raw for s in samples])
        return raw + correction
    disc = np.array([s.q_d - s.q for s in samples])
    return disc * params.p_gain + correction


def predict_baseline(params: BaselineParams, sample) -> np.ndarray:
    return predict_baseline_batch(params, [sample])[0]


# ---------------------------------------------------------------------------
# Continuous switching-force tracking
# ---------------------------------------------------------------------------

@dataclass
class ForceTrack:
    """Per-window vertical-force estimates along a trajectory.

    raw[k] is the force from the window ending at trajectory index
    k + window - 1; filtered applies a trailing (causal) mean of
    filter_width raw values.
    """

    raw: np.ndarray
    filtered: np.ndarray
    window: int
    filter_width: int


def trailing_mean(values: np.ndarray, width: int) -> np.ndarray:
    """Causal mean filter: each output averages the last `width` inputs."""
    if width < 1:
        raise ValueError("filter width must be >= 1")
    values = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    out = np.empty_like(values)
    for t in range(values.shape[0]):
        lo = max(0, t - width + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return out


def switching_force_track(
    arm: ArmModel,
    window_stream: list,
    torque_model: TorqueModel,
    attention_model: AttentionModel | None,
    filter_width: int,
) -> ForceTrack:
    """Track the payload's vertical force along consecutive sample windows.

    Each window is identified independently (learned torques, attention
    weights when a model is given, otherwise uniform); the force is the
    estimated mass times gravity magnitude. The raw series is then smoothed
    with a trailing mean filter so the output at step t uses only windows
    ending at or before t.
    """
    if not window_stream:
        raise DataError("force tracking needs at least one window")
    window = len(window_stream[0])
    g_mag = float(np.linalg.norm(arm.gravity))
    raw = np.empty(len(window_stream))
    for k, samples in enumerate(window_stream):
        if len(samples) != window:
            raise DataError("all windows in a stream must have equal length")
        tau_hat = estimate_torque_batch(torque_model, samples)
        weights = (
            joint_weights_batch(attention_model, samples)
            if attention_model is not None
            else None
        )
        system = stack_system(arm, samples, tau_hat, weights)
        raw[k] = solve_wls(system).mass * g_mag
    return ForceTrack(
        raw=raw,
        filtered=trailing_mean(raw, filter_width),
        window=window,
        filter_width=filter_width,
    )
