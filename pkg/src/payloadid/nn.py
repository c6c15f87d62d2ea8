"""Minimal fully-connected network substrate built on numpy.

Provides exactly what the learned models need: MLPs with ReLU hidden layers
and an identity output layer, reverse-mode gradients, the Adam optimizer,
and a small mini-batch training loop for plain input->target regression.
All forward/backward functions operate on batches (rows are samples); a
single sample is just a 1-row batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Weights and biases of one MLP; weights[i] has shape (dims[i], dims[i+1])."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight/bias shapes inconsistent")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def init_mlp(dims: list, rng: np.random.Generator) -> MlpParams:
    """He-style uniform initialization: W ~ U(+-sqrt(6/fan_in)), zero biases."""
    if len(dims) < 2:
        raise ValueError("an MLP needs at least input and output dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Affine + ReLU chain with identity output layer. Accepts (B, d0) or (d0,)."""
    x, single = _as_batch(x)
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input dim {x.shape[1]} != first layer dim {params.weights[0].shape[0]}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def mlp_forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping per-layer inputs for the backward pass."""
    x, _ = _as_batch(x)
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError("input dim does not match first layer")
    inputs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h, inputs


@dataclass
class MlpGrads:
    """Same structure as MlpParams, holding accumulated gradients."""

    weights: list
    biases: list

    def scale(self, factor: float) -> "MlpGrads":
        return MlpGrads(
            [w * factor for w in self.weights], [b * factor for b in self.biases]
        )


def zero_grads(params: MlpParams) -> MlpGrads:
    return MlpGrads(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def add_grads(total: MlpGrads, extra: MlpGrads) -> None:
    for tw, ew in zip(total.weights, extra.weights):
        tw += ew
    for tb, eb in zip(total.biases, extra.biases):
        tb += eb


def mlp_backward(params: MlpParams, inputs: list, grad_out: np.ndarray):
    """Reverse-mode gradients given the forward cache.

    grad_out is dL/d(output), shape (B, d_out) or (d_out,). Returns
    (MlpGrads summed over the batch, dL/d(input) with the batch shape).
    """
    grad, single = _as_batch(grad_out)
    last = len(params.weights) - 1
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for i in range(last, -1, -1):
        layer_in = inputs[i]
        if i < last:
            # inputs[i + 1] is the post-ReLU activation of this layer, so its
            # positive entries mark exactly where the ReLU passed gradient.
            grad = grad * (inputs[i + 1] > 0.0)
        grads_w[i] = layer_in.T @ grad
        grads_b[i] = grad.sum(axis=0)
        grad = grad @ params.weights[i].T
    return MlpGrads(grads_w, grads_b), (grad[0] if single else grad)


@dataclass
class AdamState:
    """Adam moment accumulators for one MlpParams."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0


def adam_init(params: MlpParams) -> AdamState:
    return AdamState(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        [np.zeros_like(b) for b in params.biases],
    )


def adam_step(
    params: MlpParams, grads: MlpGrads, state: AdamState, lr: float
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    corr1 = 1.0 - ADAM_BETA1**t
    corr2 = 1.0 - ADAM_BETA2**t
    for w, g, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        w -= lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)
    for b, g, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        b -= lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)


def minibatch_indices(
    n: int, batch_size: int, rng: np.random.Generator
):
    """Yield one epoch of shuffled mini-batch index arrays."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_mlp(
    params: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    *,
    batch_size: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
) -> list:
    """Mini-batch MSE regression on one MLP; returns per-epoch mean loss.

    The loss is the squared error averaged over batch rows and output
    dimensions. Composite models (several MLPs chained) implement their own
    loops from the forward/backward primitives; this trainer covers the
    plain single-network case.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.shape[0] == 0:
        raise DataError("cannot train on an empty dataset")
    if inputs.shape[0] != targets.shape[0]:
        raise DataError("inputs and targets must have equal row counts")
    state = adam_init(params)
    trace = []
    for _ in range(epochs):
        losses = []
        for idx in minibatch_indices(inputs.shape[0], batch_size, rng):
            x, y = inputs[idx], targets[idx]
            out, cache = mlp_forward_cached(params, x)
            diff = out - y
            losses.append(float(np.mean(diff**2)))
            grads, _ = mlp_backward(params, cache, 2.0 * diff / diff.size)
            adam_step(params, grads, state, lr)
        trace.append(float(np.mean(losses)))
    return trace


# ---------------------------------------------------------------------------
# Checkpoint (de)serialization helpers
# ---------------------------------------------------------------------------

def mlp_to_dict(params: MlpParams) -> dict:
    return {
        "dims": params.dims,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    try:
        params = MlpParams(
            [np.asarray(w, dtype=float) for w in d["weights"]],
            [np.asarray(b, dtype=float) for b in d["biases"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed MLP checkpoint: {exc}") from exc
    if params.dims != list(d.get("dims", params.dims)):
        raise DataError("MLP checkpoint dims do not match stored arrays")
    return params
