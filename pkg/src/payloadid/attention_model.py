"""Learned per-sample joint weighting for the identification solve.

Each joint's encoded state is embedded by its own small MLP; a scorer MLP
maps the embedding plus a joint-index one-hot to a scalar score, and a
softmax across the joints of one sample turns scores into positive weights
summing to one. Stacked over a window, the weights form the diagonal of the
WLS weight matrix.

Training runs the full pipeline forward — frozen torque estimates, weights,
closed-form WLS solve — and backpropagates the mass/COM losses through the
solve via its analytic weight derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm import ArmModel
from .errors import DataError, RankDeficiencyError
from .identify import IdentSystem, sample_regressor, solve_wls, wls_weight_gradient
from .nn import (
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward_cached,
    mlp_from_dict,
    mlp_to_dict,
)
from .torque_model import (
    EMBED_DIM,
    REP_HIDDEN,
    Normalization,
    TorqueModel,
    TrainSchedule,
    encode_samples,
    estimate_torque_batch,
    normalization_from_dict,
    normalization_to_dict,
)

SCORER_HIDDEN = 32


@dataclass
class AttentionSchedule(TrainSchedule):
    """Attention training adds loss weights and the window-drawing plan."""

    mass_weight: float = 1.0
    com_weight: float = 0.3
    window: int = 64
    windows_per_object: int = 100

    def __post_init__(self):
        super().__post_init__()
        if self.window < 1 or self.windows_per_object < 1:
            raise ValueError("window and windows_per_object must be >= 1")
        if self.mass_weight < 0 or self.com_weight < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class AttentionModel:
    """Per-joint representation MLPs plus one shared scorer MLP.

    Parameters are independent from the torque model's; only the input
    normalization constants are shared (copied at construction).
    """

    rep_modules: list
    scorer: MlpParams
    normalization: Normalization

    def __post_init__(self):
        n = len(self.rep_modules)
        if n < 1:
            raise ValueError("need one representation module per joint")
        emb = self.rep_modules[0].dims[-1]
        if self.scorer.dims[0] != emb + n:
            raise ValueError("scorer input dim must be embedding dim + n_joints")
        if self.scorer.dims[-1] != 1:
            raise ValueError("scorer must output a single score")

    @property
    def n_joints(self) -> int:
        return len(self.rep_modules)


def init_attention_model(
    n_joints: int, norms: Normalization, rng: np.random.Generator
) -> AttentionModel:
    reps = [init_mlp([4, REP_HIDDEN, EMBED_DIM], rng) for _ in range(n_joints)]
    scorer = init_mlp([EMBED_DIM + n_joints, SCORER_HIDDEN, 1], rng)
    return AttentionModel(reps, scorer, norms)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_scores(model: AttentionModel, enc: np.ndarray):
    """Raw scores (B, N) plus caches; enc is (B, N, 4)."""
    n = model.n_joints
    b = enc.shape[0]
    eye = np.eye(n)
    rep_caches, scorer_caches = [], []
    scores = np.empty((b, n))
    for j in range(n):
        emb, rep_cache = mlp_forward_cached(model.rep_modules[j], enc[:, j, :])
        scorer_in = np.concatenate([emb, np.tile(eye[j], (b, 1))], axis=1)
        out, scorer_cache = mlp_forward_cached(model.scorer, scorer_in)
        scores[:, j] = out[:, 0]
        rep_caches.append(rep_cache)
        scorer_caches.append(scorer_cache)
    return scores, rep_caches, scorer_caches


def joint_weights_batch(model: AttentionModel, samples) -> np.ndarray:
    """(B, N) positive per-joint weights, each row summing to 1."""
    enc = encode_samples(samples, model.normalization)
    scores, _, _ = _forward_scores(model, enc)
    return softmax_rows(scores)


def joint_weights(model: AttentionModel, sample) -> np.ndarray:
    return joint_weights_batch(model, [sample])[0]


def weight_matrix(model: AttentionModel, window_samples) -> np.ndarray:
    """Diagonal of the window's WLS weight matrix, as a length M*N vector.

    Entry order matches the stacked system rows: sample-major, joint-minor.
    """
    if not window_samples:
        raise ValueError("cannot weight an empty window")
    return joint_weights_batch(model, window_samples).reshape(-1)


# ---------------------------------------------------------------------------
# Training through the WLS solve
# ---------------------------------------------------------------------------

def _window_loss_and_solution_grad(
    regressor, residual, weights, mass_true, com_true, mass_weight, com_weight,
    n_joints,
):
    """Loss and dL/dx for one window given its flattened weights.

    COM loss uses the true mass for the division; windows whose true mass is
    zero (free motion) contribute only the mass term.
    """
    system = IdentSystem(regressor, residual, weights, n_joints)
    known = mass_true if mass_true > 0.0 else None
    estimate = solve_wls(system, known_mass=known)
    x = estimate.solution
    grad_x = np.zeros(4)
    loss = mass_weight * (x[0] - mass_true) ** 2
    grad_x[0] = 2.0 * mass_weight * (x[0] - mass_true)
    if known is not None and estimate.com_defined:
        com_err = estimate.com_tag - com_true
        loss += com_weight * float(np.dot(com_err, com_err))
        grad_x[1:] = 2.0 * com_weight * com_err / mass_true
    return system, estimate, float(loss), grad_x


def attention_batch_gradients(
    model: AttentionModel,
    enc: np.ndarray,
    window_regressors: list,
    window_residuals: list,
    truths: list,
    mass_weight: float,
    com_weight: float,
):
    """Mean loss and parameter gradients over a batch of windows.

    enc is (B*M, N, 4) — the encodings of every window's samples in order;
    window_regressors[i]/window_residuals[i] are the i-th window's stacked
    (M*N, 4) regressor and (M*N,) residual; truths[i] = (mass, com_tag).
    Rank-deficient windows are skipped and counted.
    """
    n = model.n_joints
    window = enc.shape[0] // len(window_regressors)
    scores, rep_caches, scorer_caches = _forward_scores(model, enc)
    weights = softmax_rows(scores)

    grad_w = np.zeros_like(weights)
    losses = []
    skipped = 0
    for i, (regressor, residual) in enumerate(
        zip(window_regressors, window_residuals)
    ):
        rows = slice(i * window, (i + 1) * window)
        w_flat = weights[rows].reshape(-1)
        mass_true, com_true = truths[i]
        try:
            system, estimate, loss, grad_x = _window_loss_and_solution_grad(
                regressor, residual, w_flat, mass_true, com_true,
                mass_weight, com_weight, n,
            )
        except RankDeficiencyError:
            skipped += 1
            continue
        losses.append(loss)
        grad_w[rows] = wls_weight_gradient(
            system, estimate.solution, grad_x
        ).reshape(window, n)
    if not losses:
        return float("nan"), None, None, skipped
    grad_w /= len(losses)

    # Softmax backward, row-wise: ds = w * (dw - <dw, w>).
    inner = np.sum(grad_w * weights, axis=1, keepdims=True)
    grad_scores = weights * (grad_w - inner)

    scorer_grads = None
    rep_grads = []
    for j in range(n):
        g, scorer_in_grad = mlp_backward(
            model.scorer, scorer_caches[j], grad_scores[:, j : j + 1]
        )
        if scorer_grads is None:
            scorer_grads = g
        else:
            for acc, extra in zip(scorer_grads.weights, g.weights):
                acc += extra
            for acc, extra in zip(scorer_grads.biases, g.biases):
                acc += extra
        rep_g, _ = mlp_backward(
            model.rep_modules[j], rep_caches[j], scorer_in_grad[:, :EMBED_DIM]
        )
        rep_grads.append(rep_g)
    return float(np.mean(losses)), scorer_grads, rep_grads, skipped


def precompute_pool(
    arm: ArmModel, torque_model: TorqueModel, norms: Normalization, samples
) -> dict:
    """Per-sample arrays reused across epochs: encodings, regressors, residuals."""
    enc = encode_samples(samples, norms)
    tau_hat = estimate_torque_batch(torque_model, samples)
    regressor = np.stack([sample_regressor(arm, s.q, s.tag_pose) for s in samples])
    residual = tau_hat - np.array([s.tau_g for s in samples])
    first = samples[0].object
    return {
        "enc": enc,
        "regressor": regressor,
        "residual": residual,
        "mass": first.mass,
        "com": first.com_tag,
    }


def train_attention(
    model: AttentionModel,
    torque_model: TorqueModel,
    arm: ArmModel,
    sample_pools: list,
    schedule: AttentionSchedule,
    seed,
):
    """Train the attention model through the WLS solve, in place.

    sample_pools is a list of per-object sample lists (each sharing one
    ObjectSpec). Fresh windows are drawn from every pool each epoch. Returns
    trace rows (epoch, mean_loss, skipped_windows).
    """
    if not sample_pools or any(len(pool) == 0 for pool in sample_pools):
        raise DataError("attention training needs non-empty sample pools")
    for pool in sample_pools:
        if len(pool) < schedule.window:
            raise DataError(
                f"pool of {len(pool)} samples cannot fill a window of "
                f"{schedule.window}"
            )
        masses = {s.object.mass for s in pool}
        if len(masses) != 1:
            raise DataError("each attention-training pool must hold one object")
    rng = np.random.default_rng(seed)
    pools = [
        precompute_pool(arm, torque_model, model.normalization, pool)
        for pool in sample_pools
    ]

    scorer_state = adam_init(model.scorer)
    rep_states = [adam_init(rep) for rep in model.rep_modules]
    m = schedule.window
    trace = []
    for epoch in range(schedule.epochs):
        window_specs = []
        for pool_idx, pool in enumerate(pools):
            size = pool["enc"].shape[0]
            for _ in range(schedule.windows_per_object):
                window_specs.append(
                    (pool_idx, rng.choice(size, size=m, replace=False))
                )
        order = rng.permutation(len(window_specs))

        epoch_losses = []
        epoch_skipped = 0
        for start in range(0, len(order), schedule.batch_size):
            batch = [window_specs[k] for k in order[start : start + schedule.batch_size]]
            enc = np.concatenate(
                [pools[p]["enc"][idx] for p, idx in batch], axis=0
            )
            regs = [pools[p]["regressor"][idx].reshape(-1, 4) for p, idx in batch]
            resids = [pools[p]["residual"][idx].reshape(-1) for p, idx in batch]
            truths = [(pools[p]["mass"], pools[p]["com"]) for p, idx in batch]
            loss, scorer_grads, rep_grads, skipped = attention_batch_gradients(
                model, enc, regs, resids, truths,
                schedule.mass_weight, schedule.com_weight,
            )
            epoch_skipped += skipped
            if scorer_grads is None:
                continue
            epoch_losses.append(loss)
            adam_step(model.scorer, scorer_grads, scorer_state, schedule.lr)
            for rep, grads, state in zip(model.rep_modules, rep_grads, rep_states):
                adam_step(rep, grads, state, schedule.lr)
        trace.append(
            (epoch + 1,
             float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
             epoch_skipped)
        )
    return trace


def evaluate_attention_loss(
    model: AttentionModel,
    torque_model: TorqueModel,
    arm: ArmModel,
    windows: list,
    mass_weight: float,
    com_weight: float,
):
    """Forward-only mean attention loss over explicit windows (for checks)."""
    losses = []
    for window_samples in windows:
        pool = precompute_pool(arm, torque_model, model.normalization, window_samples)
        weights = joint_weights_batch(model, window_samples).reshape(-1)
        _, _, loss, _ = _window_loss_and_solution_grad(
            pool["regressor"].reshape(-1, 4),
            pool["residual"].reshape(-1),
            weights,
            pool["mass"],
            pool["com"],
            mass_weight,
            com_weight,
            model.n_joints,
        )
        losses.append(loss)
    return float(np.mean(losses))


def attention_model_to_dict(model: AttentionModel, torque_model_hash: str) -> dict:
    return {
        "kind": "attention_model",
        "n_joints": model.n_joints,
        "torque_model_hash": torque_model_hash,
        "normalization": normalization_to_dict(model.normalization),
        "rep_modules": [mlp_to_dict(rep) for rep in model.rep_modules],
        "scorer": mlp_to_dict(model.scorer),
    }


def attention_model_from_dict(d: dict):
    """Returns (model, torque_model_hash recorded at training time)."""
    try:
        if d["kind"] != "attention_model":
            raise DataError(f"not an attention-model checkpoint: kind={d['kind']!r}")
        model = AttentionModel(
            rep_modules=[mlp_from_dict(r) for r in d["rep_modules"]],
            scorer=mlp_from_dict(d["scorer"]),
            normalization=normalization_from_dict(d["normalization"]),
        )
        return model, d["torque_model_hash"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed attention-model checkpoint: {exc}") from exc
