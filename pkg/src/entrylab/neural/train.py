"""Training: sequence loss, exact backpropagation through time, per-tensor
gradient-norm clipping, ADAM with a decaying learning rate, and the epoch
loop over variable-length minibatches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lstm import BatchCache, LstmModel, forward_batch


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the last good model."""

    def __init__(self, message, model, history):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    minibatch: int = 128
    learning_rate0: float = 1e-3
    decay: float = 1e-3
    grad_norm_cap: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.minibatch) <= 0:
            raise ValueError("epochs and minibatch must be positive")
        if min(self.learning_rate0, self.decay, self.grad_norm_cap) <= 0:
            raise ValueError("learning rate, decay, and cap must be positive")


def learning_rate(cfg: TrainConfig, k: int) -> float:
    """Decaying rate lambda_k = lambda0 / (1 + decay * k), k = update index."""
    return cfg.learning_rate0 / (1.0 + cfg.decay * k)


def sequence_loss(preds: np.ndarray, targets: np.ndarray,
                  lengths: np.ndarray) -> float:
    """Mean over samples of the per-sample time-average of ||err||^2.

    preds: (B, T, m) padded predictions; targets: (B, m) profile targets
    (identical at every step of a sample); lengths: valid steps per sample.
    """
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    B, T, m = preds.shape
    if targets.shape != (B, m):
        raise ValueError("target shape mismatch")
    total = 0.0
    for k in range(B):
        n = int(lengths[k])
        err = preds[k, :n] - targets[k]
        total += np.sum(err * err) / n
    return total / B


def backward_sequence(model: LstmModel, cache: BatchCache, preds: np.ndarray,
                      targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of sequence_loss w.r.t. every parameter via BPTT.

    Padded steps contribute nothing: their output gradient is zero and the
    zero propagates through the recurrence.
    """
    B, T, m = preds.shape
    H = model.hidden_size
    lengths = cache.lengths

    d_preds = np.zeros_like(preds)
    for k in range(B):
        n = int(lengths[k])
        d_preds[k, :n] = 2.0 * (preds[k, :n] - targets[k]) / (B * n)

    grads = {name: np.zeros_like(p) for name, p in model.parameters().items()}

    last = cache.dropped[-1]  # (B, T, H) input to the dense layer
    grads["dense_w"] += np.einsum("btm,bth->mh", d_preds, last)
    grads["dense_b"] += d_preds.sum(axis=(0, 1))
    d_hidden = d_preds @ model.dense_w  # gradient w.r.t. dropped layer-2 output

    sig_act = model.hidden_activation == "sigmoid"
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        g = cache.gates[li]
        mask = cache.masks[li]
        dh_ext = d_hidden * mask if mask is not None else d_hidden

        dx = np.zeros_like(cache.layer_inputs[li])
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        gw = grads[f"layer{li}.w"]
        gu = grads[f"layer{li}.u"]
        gb = grads[f"layer{li}.b"]
        for t in range(T - 1, -1, -1):
            f = g["f"][:, t]
            i = g["i"][:, t]
            o = g["o"][:, t]
            gg = g["g"][:, t]
            act = g["act"][:, t]
            c_prev = g["c_prev"][:, t]
            h_prev = g["h_prev"][:, t]

            dh = dh_ext[:, t] + dh_next
            do = dh * act
            if sig_act:
                dact_dc = act * (1.0 - act)
            else:
                dact_dc = 1.0 - act * act
            dc = dc_next + dh * o * dact_dc
            df = dc * c_prev
            di = dc * gg
            dg = dc * i

            da = np.empty((B, 4 * H))
            da[:, 0:H] = df * f * (1.0 - f)
            da[:, H:2 * H] = di * i * (1.0 - i)
            da[:, 2 * H:3 * H] = do * o * (1.0 - o)
            da[:, 3 * H:4 * H] = dg * (1.0 - gg * gg)

            x_t = cache.layer_inputs[li][:, t]
            gw += da.T @ x_t
            gu += da.T @ h_prev
            gb += da.sum(axis=0)
            dx[:, t] = da @ layer.w
            dh_next = da @ layer.u
            dc_next = dc * f
        d_hidden = dx  # becomes the dropped-output gradient of the layer below
    return grads


def clip_gradients(model: LstmModel, grads: dict[str, np.ndarray],
                   cap: float) -> dict[str, np.ndarray]:
    """Limit the L2 norm of each parameter's gradient to `cap`.

    Gate parameters are clipped per gate block (f, i, o, c separately), in
    place; idempotent on already-clipped tensors.
    """
    for name, grad in grads.items():
        for block in model.gate_blocks(name, grad):
            norm = float(np.linalg.norm(block))
            if norm > cap:
                block *= cap / norm
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, model: LstmModel) -> "AdamState":
        params = model.parameters()
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(model: LstmModel, grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """In-place ADAM update with rate lambda_k evaluated at k = state.t."""
    lr = learning_rate(cfg, state.t)
    state.t += 1
    t = state.t
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in model.parameters().items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _pad_batch(samples: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([s[0].shape[0] for s in samples])
    T = int(lengths.max())
    d = samples[0][0].shape[1]
    m = samples[0][1].shape[0]
    xs = np.zeros((len(samples), T, d))
    ys = np.empty((len(samples), m))
    for k, (x, y) in enumerate(samples):
        xs[k, :x.shape[0]] = x
        ys[k] = y
    return xs, ys, lengths


def evaluate_loss(model: LstmModel, samples: list, batch_size: int = 64) -> float:
    """Inference-mode loss (dropout inactive) over a sample list."""
    if not samples:
        return float("nan")
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        xs, ys, lengths = _pad_batch(chunk)
        preds, _ = forward_batch(model, xs, lengths, training=False)
        total += sequence_loss(preds, ys, lengths) * len(chunk)
    return total / len(samples)


@dataclass
class TrainResult:
    model: LstmModel
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)


def train(model: LstmModel, train_samples: list, cfg: TrainConfig,
          val_samples: list | None = None, log=None) -> TrainResult:
    """Optimize in minibatches of length-sorted sequences.

    Samples are (X_normalized (N, d), y_normalized (m,)) pairs. Sequences are
    grouped by similar length (sorted) so padding stays small; batch order is
    reshuffled each epoch from the seeded generator. The per-sample 1/N
    weighting of the loss means padding never contributes.
    """
    if not train_samples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    lengths_all = np.array([s[0].shape[0] for s in train_samples])

    adam = AdamState.init(model)
    history = []
    last_good = model.copy()
    for epoch in range(1, cfg.epochs + 1):
        # fresh minibatch membership each epoch; within the shuffle, group
        # similar lengths so padding stays small
        perm = rng.permutation(len(train_samples))
        n_batches = math.ceil(len(train_samples) / cfg.minibatch)
        groups = []
        for b in range(n_batches):
            idx = perm[b * cfg.minibatch:(b + 1) * cfg.minibatch]
            groups.append(idx[np.argsort(lengths_all[idx], kind="stable")])
        epoch_loss = 0.0
        n_seen = 0
        for idx in groups:
            xs, ys, lengths = _pad_batch([train_samples[j] for j in idx])
            preds, cache = forward_batch(model, xs, lengths, training=True, rng=rng)
            loss = sequence_loss(preds, ys, lengths)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good, history)
            grads = backward_sequence(model, cache, preds, ys)
            clip_gradients(model, grads, cfg.grad_norm_cap)
            adam_step(model, grads, adam, cfg)
            epoch_loss += loss * len(lengths)
            n_seen += len(lengths)
        train_loss = epoch_loss / n_seen
        val_loss = evaluate_loss(model, val_samples) if val_samples else float("nan")
        history.append((epoch, train_loss, val_loss))
        if log is not None:
            log(epoch, train_loss, val_loss)
        last_good = model.copy()
    return TrainResult(model, history)
