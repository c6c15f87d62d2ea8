"""Learned joint-torque estimator driven by encoder discrepancies.

Each joint's state is encoded as a 4-vector (normalized position, scaled
discrepancy, rotation-direction one-hot) and embedded by that joint's own
small MLP; the concatenated embeddings feed one estimator MLP that outputs
all joint torques at once, in per-joint scaled units. Normalization constants
are fitted on the training data, stored with the model, and reused verbatim
afterwards — inputs outside the fitted ranges are clamped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .nn import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    minibatch_indices,
    mlp_backward,
    mlp_forward_cached,
    mlp_from_dict,
    mlp_to_dict,
    zero_grads,
)

EMBED_DIM = 12
REP_HIDDEN = 12
ESTIMATOR_HIDDEN = 64
SCALE_FLOOR = 1e-12


@dataclass
class TrainSchedule:
    """Mini-batch schedule shared by the trainable models.

    average_tail > 0 returns the parameter average over that final fraction
    of epochs instead of the last iterate: constant-step Adam settles into a
    noise ball around the optimum, and averaging the tail collapses both the
    wander and the small systematic offset of any single iterate.
    """

    batch_size: int
    epochs: int
    lr: float
    average_tail: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ValueError("schedule needs batch_size, epochs >= 1 and lr > 0")
        if not 0.0 <= self.average_tail <= 1.0:
            raise ValueError("average_tail must lie in [0, 1]")


@dataclass
class Normalization:
    """Input/output scaling fitted on training data.

    q_min/q_max bound the measured joint angles (min-max normalization);
    err_scale divides the discrepancy q_d - q; tau_scale divides the torque
    targets so their magnitude is at most 1 on the training set. clamp_count
    counts encode-time values that fell outside [q_min, q_max] or exceeded
    the discrepancy scale and were clamped.
    """

    q_min: np.ndarray
    q_max: np.ndarray
    err_scale: np.ndarray
    tau_scale: np.ndarray
    clamp_count: int = 0

    def __post_init__(self):
        self.q_min = np.asarray(self.q_min, dtype=float)
        self.q_max = np.asarray(self.q_max, dtype=float)
        self.err_scale = np.asarray(self.err_scale, dtype=float)
        self.tau_scale = np.asarray(self.tau_scale, dtype=float)
        if np.any(self.q_max <= self.q_min):
            raise ValueError("q_max must exceed q_min per joint")
        if np.any(self.err_scale <= 0) or np.any(self.tau_scale <= 0):
            raise ValueError("scales must be strictly positive")

    @property
    def n_joints(self) -> int:
        return self.q_min.shape[0]


def fit_normalization(samples) -> Normalization:
    if not samples:
        raise DataError("cannot fit normalization on an empty dataset")
    q = np.array([s.q for s in samples])
    err = np.array([s.q_d - s.q for s in samples])
    tau = np.array([s.tau_true for s in samples])
    q_min, q_max = q.min(axis=0), q.max(axis=0)
    spread = np.maximum(q_max - q_min, SCALE_FLOOR)
    return Normalization(
        q_min=q_min,
        q_max=q_min + spread,
        err_scale=np.maximum(np.abs(err).max(axis=0), SCALE_FLOOR),
        tau_scale=np.maximum(np.abs(tau).max(axis=0), SCALE_FLOOR),
    )


def normalization_to_dict(norms: Normalization) -> dict:
    return {
        "q_min": norms.q_min.tolist(),
        "q_max": norms.q_max.tolist(),
        "err_scale": norms.err_scale.tolist(),
        "tau_scale": norms.tau_scale.tolist(),
    }


def normalization_from_dict(d: dict) -> Normalization:
    try:
        return Normalization(
            q_min=np.asarray(d["q_min"], dtype=float),
            q_max=np.asarray(d["q_max"], dtype=float),
            err_scale=np.asarray(d["err_scale"], dtype=float),
            tau_scale=np.asarray(d["tau_scale"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed normalization record: {exc}") from exc


def encode_samples(samples, norms: Normalization) -> np.ndarray:
    """(B, N, 4) joint-state encodings for a batch of samples.

    Per joint: [min-max q, scaled discrepancy, dir +1 flag, dir -1 flag].
    Values outside the fitted ranges are clamped and counted on `norms`.
    """
    q = np.array([s.q for s in samples])
    err = np.array([s.q_d for s in samples]) - q
    rot = np.array([s.rot_dir for s in samples])
    q_norm = (q - norms.q_min) / (norms.q_max - norms.q_min)
    err_norm = err / norms.err_scale
    clipped = int(np.sum((q_norm < 0) | (q_norm > 1)))
    clipped += int(np.sum(np.abs(err_norm) > 1))
    if clipped:
        norms.clamp_count += clipped
    q_norm = np.clip(q_norm, 0.0, 1.0)
    err_norm = np.clip(err_norm, -1.0, 1.0)
    enc = np.empty((len(samples), norms.n_joints, 4))
    enc[:, :, 0] = q_norm
    enc[:, :, 1] = err_norm
    enc[:, :, 2] = rot > 0
    enc[:, :, 3] = rot < 0
    return enc


def encode_joint_state(sample, joint: int, norms: Normalization) -> np.ndarray:
    """4-vector encoding of one joint of one sample."""
    return encode_samples([sample], norms)[0, joint]


@dataclass
class TorqueModel:
    """Per-joint representation MLPs plus one shared torque-estimator MLP."""

    rep_modules: list
    estimator: MlpParams
    normalization: Normalization

    def __post_init__(self):
        n = len(self.rep_modules)
        if n < 1:
            raise ValueError("need one representation module per joint")
        emb = self.rep_modules[0].dims[-1]
        if self.estimator.dims[0] != n * emb:
            raise ValueError("estimator input dim must be n_joints * embedding dim")
        if self.estimator.dims[-1] != n:
            raise ValueError("estimator must output one torque per joint")

    @property
    def n_joints(self) -> int:
        return len(self.rep_modules)


def init_torque_model(
    n_joints: int, norms: Normalization, rng: np.random.Generator
) -> TorqueModel:
    reps = [init_mlp([4, REP_HIDDEN, EMBED_DIM], rng) for _ in range(n_joints)]
    estimator = init_mlp(
        [n_joints * EMBED_DIM, ESTIMATOR_HIDDEN, ESTIMATOR_HIDDEN, n_joints], rng
    )
    return TorqueModel(reps, estimator, norms)


def _forward_scaled(model: TorqueModel, enc: np.ndarray):
    """Scaled torque predictions (B, N) plus caches for the backward pass."""
    rep_caches = []
    embs = []
    for j, rep in enumerate(model.rep_modules):
        out, cache = mlp_forward_cached(rep, enc[:, j, :])
        embs.append(out)
        rep_caches.append(cache)
    concat = np.concatenate(embs, axis=1)
    scaled, est_cache = mlp_forward_cached(model.estimator, concat)
    return scaled, (rep_caches, est_cache)


def estimate_torque_batch(model: TorqueModel, samples) -> np.ndarray:
    """(B, N) estimated external joint torques in N*m."""
    enc = encode_samples(samples, model.normalization)
    scaled, _ = _forward_scaled(model, enc)
    return scaled * model.normalization.tau_scale


def estimate_torque(model: TorqueModel, sample) -> np.ndarray:
    return estimate_torque_batch(model, [sample])[0]


def train_torque_model(
    samples,
    schedule: TrainSchedule,
    seed,
    *,
    holdout_fraction: float = 0.1,
):
    """Fit the torque model by mini-batch MSE on scaled true torques.

    A fraction of the data is held out purely for the reported loss trace
    (never for model selection). Returns (model, trace) where trace rows are
    (epoch, train_loss, holdout_loss) in scaled units. The trace always
    follows the running iterate; when the schedule sets average_tail, the
    returned model carries the tail-averaged parameters instead.
    """
    if not samples:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    n = len(samples)
    order = rng.permutation(n)
    n_hold = int(round(holdout_fraction * n))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    if train_idx.size == 0:
        raise DataError("holdout fraction leaves no training samples")
    train_samples = [samples[i] for i in train_idx]
    norms = fit_normalization(train_samples)
    model = init_torque_model(train_samples[0].n_joints, norms, rng)

    enc_train = encode_samples(train_samples, norms)
    y_train = np.array([s.tau_true for s in train_samples]) / norms.tau_scale
    if n_hold:
        hold_samples = [samples[i] for i in hold_idx]
        enc_hold = encode_samples(hold_samples, norms)
        y_hold = np.array([s.tau_true for s in hold_samples]) / norms.tau_scale

    states = [adam_init(rep) for rep in model.rep_modules]
    est_state = adam_init(model.estimator)
    emb = EMBED_DIM
    modules = [model.estimator] + model.rep_modules
    tail = (
        max(1, int(round(schedule.average_tail * schedule.epochs)))
        if schedule.average_tail > 0
        else 0
    )
    averages = [zero_grads(m) for m in modules] if tail else None
    averaged_epochs = 0
    trace = []
    for epoch in range(schedule.epochs):
        batch_losses = []
        for idx in minibatch_indices(len(train_samples), schedule.batch_size, rng):
            enc, y = enc_train[idx], y_train[idx]
            scaled, (rep_caches, est_cache) = _forward_scaled(model, enc)
            diff = scaled - y
            batch_losses.append(float(np.mean(diff**2)))
            est_grads, concat_grad = mlp_backward(
                model.estimator, est_cache, 2.0 * diff / diff.size
            )
            adam_step(model.estimator, est_grads, est_state, schedule.lr)
            for j, rep in enumerate(model.rep_modules):
                rep_grads, _ = mlp_backward(
                    rep, rep_caches[j], concat_grad[:, j * emb : (j + 1) * emb]
                )
                adam_step(rep, rep_grads, states[j], schedule.lr)
        if tail and epoch >= schedule.epochs - tail:
            for acc, module in zip(averages, modules):
                for a, w in zip(acc.weights, module.weights):
                    a += w
                for a, b in zip(acc.biases, module.biases):
                    a += b
            averaged_epochs += 1
        train_loss = float(np.mean(batch_losses))
        if n_hold:
            scaled, _ = _forward_scaled(model, enc_hold)
            hold_loss = float(np.mean((scaled - y_hold) ** 2))
        else:
            hold_loss = float("nan")
        trace.append((epoch + 1, train_loss, hold_loss))
    if tail:
        for acc, module in zip(averages, modules):
            for a, w in zip(acc.weights, module.weights):
                w[:] = a / averaged_epochs
            for a, b in zip(acc.biases, module.biases):
                b[:] = a / averaged_epochs
    return model, trace


def torque_model_to_dict(model: TorqueModel) -> dict:
    return {
        "kind": "torque_model",
        "n_joints": model.n_joints,
        "normalization": normalization_to_dict(model.normalization),
        "rep_modules": [mlp_to_dict(rep) for rep in model.rep_modules],
        "estimator": mlp_to_dict(model.estimator),
    }


def torque_model_from_dict(d: dict) -> TorqueModel:
    try:
        if d["kind"] != "torque_model":
            raise DataError(f"not a torque-model checkpoint: kind={d['kind']!r}")
        model = TorqueModel(
            rep_modules=[mlp_from_dict(r) for r in d["rep_modules"]],
            estimator=mlp_from_dict(d["estimator"]),
            normalization=normalization_from_dict(d["normalization"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed torque-model checkpoint: {exc}") from exc
    if model.n_joints != d.get("n_joints", model.n_joints):
        raise DataError("checkpoint joint count does not match stored modules")
    return model
