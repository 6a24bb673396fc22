"""Recurrent network forward passes.

Gate equations per cell and time step k (sigmoid s, elementwise *):

    f = s(W_f x + U_f h_prev + b_f)
    i = s(W_i x + U_i h_prev + b_i)
    o = s(W_o x + U_o h_prev + b_o)
    c = f * c_prev + i * tanh(W_c x + U_c h_prev + b_c)
    h = o * act(c)

where act is sigmoid by default (configurable to tanh). Two recurrent layers,
each followed by inverted dropout during training, feed a linear output
layer; the network maps an input sequence to an output sequence of the same
length (causal: step k depends only on inputs up to k).

Gate weights are stored stacked as (4h, d) / (4h, h) blocks in f, i, o, c
order; per-gate views are exposed as properties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GATE_ORDER = ("f", "i", "o", "c")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def hidden_activation_fn(name: str):
    if name == "sigmoid":
        return sigmoid
    if name == "tanh":
        return np.tanh
    raise ValueError(f"unknown hidden activation {name!r}")


@dataclass
class LstmLayerParams:
    """Stacked gate parameters of one recurrent layer."""

    w: np.ndarray  # (4h, d) input weights, gate blocks in GATE_ORDER
    u: np.ndarray  # (4h, h) recurrent weights
    b: np.ndarray  # (4h,) biases

    def __post_init__(self):
        h4, d = self.w.shape
        if h4 % 4 != 0 or self.u.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ValueError("inconsistent gate parameter shapes")
        del d

    @property
    def hidden_size(self) -> int:
        return self.w.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[1]

    def _gate(self, arr, name):
        h = self.hidden_size
        j = GATE_ORDER.index(name)
        return arr[j * h:(j + 1) * h]

    @property
    def w_f(self):
        return self._gate(self.w, "f")

    @property
    def w_i(self):
        return self._gate(self.w, "i")

    @property
    def w_o(self):
        return self._gate(self.w, "o")

    @property
    def w_c(self):
        return self._gate(self.w, "c")

    @property
    def u_f(self):
        return self._gate(self.u, "f")

    @property
    def u_i(self):
        return self._gate(self.u, "i")

    @property
    def u_o(self):
        return self._gate(self.u, "o")

    @property
    def u_c(self):
        return self._gate(self.u, "c")

    @property
    def b_f(self):
        return self._gate(self.b, "f")

    @property
    def b_i(self):
        return self._gate(self.b, "i")

    @property
    def b_o(self):
        return self._gate(self.b, "o")

    @property
    def b_c(self):
        return self._gate(self.b, "c")


@dataclass
class LstmCellState:
    """Cell and hidden state; zero at sequence start."""

    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmCellState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass
class NormStats:
    """z-score statistics carried with a trained model."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray


@dataclass
class LstmModel:
    layers: list  # [LstmLayerParams, LstmLayerParams]
    dense_w: np.ndarray  # (m, h)
    dense_b: np.ndarray  # (m,)
    dropout_rate: float = 0.2
    hidden_activation: str = "sigmoid"
    stats: NormStats | None = None
    seed: int | None = None

    @property
    def input_size(self):
        return self.layers[0].input_size

    @property
    def hidden_size(self):
        return self.layers[0].hidden_size

    @property
    def output_size(self):
        return self.dense_w.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> tensor view, stable ordering (optimizer state keys)."""
        out = {}
        for li, layer in enumerate(self.layers):
            out[f"layer{li}.w"] = layer.w
            out[f"layer{li}.u"] = layer.u
            out[f"layer{li}.b"] = layer.b
        out["dense_w"] = self.dense_w
        out["dense_b"] = self.dense_b
        return out

    def gate_blocks(self, name: str, arr: np.ndarray):
        """Per-gate sub-tensors of a parameter (clipping granularity)."""
        if name.startswith("layer"):
            h = self.hidden_size
            return [arr[j * h:(j + 1) * h] for j in range(4)]
        return [arr]

    def copy(self) -> "LstmModel":
        return LstmModel(
            layers=[LstmLayerParams(l.w.copy(), l.u.copy(), l.b.copy())
                    for l in self.layers],
            dense_w=self.dense_w.copy(), dense_b=self.dense_b.copy(),
            dropout_rate=self.dropout_rate,
            hidden_activation=self.hidden_activation,
            stats=self.stats, seed=self.seed)


def init_model(input_size: int, hidden_size: int, output_size: int, seed: int,
               dropout_rate: float = 0.2,
               hidden_activation: str = "sigmoid") -> LstmModel:
    """Seeded initialization tuned for short training budgets.

    Input weights are fan-in-scaled uniform, recurrent blocks are orthogonal
    per gate, forget-gate biases start at 2 (memory initially persists), and
    the output layer gets a wider uniform band to counter the reduced
    gradient scale of the sigmoid cell-state activation.
    """
    rng = np.random.default_rng(seed)
    h = hidden_size

    layers = []
    d = input_size
    for _ in range(2):
        w_bound = np.sqrt(3.0 / d)
        w = rng.uniform(-w_bound, w_bound, size=(4 * h, d))
        u = np.empty((4 * h, h))
        for j in range(4):
            q, _ = np.linalg.qr(rng.standard_normal((h, h)))
            u[j * h:(j + 1) * h] = q
        b = np.zeros(4 * h)
        b[0:h] = 2.0  # forget gate
        layers.append(LstmLayerParams(w=w, u=u, b=b))
        d = h
    dense_bound = 2.0 / np.sqrt(h)
    return LstmModel(layers=layers,
                     dense_w=rng.uniform(-dense_bound, dense_bound,
                                         size=(output_size, h)),
                     dense_b=np.zeros(output_size),
                     dropout_rate=dropout_rate,
                     hidden_activation=hidden_activation,
                     seed=seed)


def lstm_cell_forward(x: np.ndarray, prev: LstmCellState, params: LstmLayerParams,
                      hidden_activation: str = "sigmoid") -> LstmCellState:
    """Single-step cell update on vectors."""
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite cell input")
    h = params.hidden_size
    a = params.w @ x + params.u @ prev.h + params.b
    f = sigmoid(a[0:h])
    i = sigmoid(a[h:2 * h])
    o = sigmoid(a[2 * h:3 * h])
    g = np.tanh(a[3 * h:4 * h])
    c = f * prev.c + i * g
    act = hidden_activation_fn(hidden_activation)(c)
    return LstmCellState(c=c, h=o * act)


def dropout_forward(values: np.ndarray, rate: float, rng: np.random.Generator | None,
                    training: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: keep with probability 1-rate and rescale by
    1/(1-rate) during training; identity at inference. Returns (output, mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("drop rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return values, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(values.shape) < keep) / keep
    return values * mask, mask


def forward_sequence(model: LstmModel, xs: np.ndarray, training: bool = False,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Map an (N, d) input sequence to the (N, m) output sequence."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("input must be a non-empty (N, d) sequence")
    states = [LstmCellState.zeros(model.hidden_size) for _ in model.layers]
    outs = np.empty((xs.shape[0], model.output_size))
    for t in range(xs.shape[0]):
        inp = xs[t]
        for li, layer in enumerate(model.layers):
            states[li] = lstm_cell_forward(inp, states[li], layer,
                                           model.hidden_activation)
            inp, _ = dropout_forward(states[li].h, model.dropout_rate, rng, training)
        outs[t] = model.dense_w @ inp + model.dense_b
    return outs


@dataclass
class StreamState:
    """Incremental inference state: one cell state per layer."""

    states: list


def init_stream_state(model: LstmModel) -> StreamState:
    return StreamState([LstmCellState.zeros(model.hidden_size) for _ in model.layers])


def stream_step(model: LstmModel, stream: StreamState, x: np.ndarray) -> np.ndarray:
    """Advance the recurrent state by one input and return that step's output
    (identical to the last row of forward_sequence on the full prefix)."""
    inp = np.asarray(x, dtype=float)
    for li, layer in enumerate(model.layers):
        stream.states[li] = lstm_cell_forward(inp, stream.states[li], layer,
                                              model.hidden_activation)
        inp = stream.states[li].h
    return model.dense_w @ inp + model.dense_b


@dataclass
class BatchCache:
    """Per-step intermediates saved by the batched forward pass for BPTT."""

    xs: np.ndarray  # (B, T, d) padded inputs
    lengths: np.ndarray
    layer_inputs: list  # per layer: (B, T, d_layer) inputs seen by the layer
    gates: list  # per layer: dict of (B, T, h) arrays f,i,o,g,c,act,h_prev,c_prev
    masks: list  # per layer: (B, T, h) dropout masks or None
    dropped: list  # per layer: (B, T, h) post-dropout hidden outputs


def forward_batch(model: LstmModel, xs: np.ndarray, lengths: np.ndarray,
                  training: bool = False,
                  rng: np.random.Generator | None = None
                  ) -> tuple[np.ndarray, BatchCache]:
    """Batched padded forward pass. Steps at or beyond a sample's length are
    computed but carry no loss contribution; the caller masks them."""
    xs = np.asarray(xs, dtype=float)
    B, T, _ = xs.shape
    act_fn = hidden_activation_fn(model.hidden_activation)
    H = model.hidden_size
    keep = 1.0 - model.dropout_rate

    layer_inputs = []
    gates = []
    masks = []
    dropped = []
    inp = xs
    for layer in model.layers:
        layer_inputs.append(inp)
        f_s = np.empty((B, T, H))
        i_s = np.empty((B, T, H))
        o_s = np.empty((B, T, H))
        g_s = np.empty((B, T, H))
        c_s = np.empty((B, T, H))
        act_s = np.empty((B, T, H))
        hprev_s = np.empty((B, T, H))
        cprev_s = np.empty((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        out_h = np.empty((B, T, H))
        for t in range(T):
            hprev_s[:, t] = h
            cprev_s[:, t] = c
            a = inp[:, t] @ layer.w.T + h @ layer.u.T + layer.b
            f = sigmoid(a[:, 0:H])
            i = sigmoid(a[:, H:2 * H])
            o = sigmoid(a[:, 2 * H:3 * H])
            g = np.tanh(a[:, 3 * H:4 * H])
            c = f * c + i * g
            act = act_fn(c)
            h = o * act
            f_s[:, t] = f
            i_s[:, t] = i
            o_s[:, t] = o
            g_s[:, t] = g
            c_s[:, t] = c
            act_s[:, t] = act
            out_h[:, t] = h
        if training and model.dropout_rate > 0.0:
            mask = (rng.random((B, T, H)) < keep) / keep
            out_d = out_h * mask
        else:
            mask = None
            out_d = out_h
        gates.append({"f": f_s, "i": i_s, "o": o_s, "g": g_s, "c": c_s,
                      "act": act_s, "h_prev": hprev_s, "c_prev": cprev_s})
        masks.append(mask)
        dropped.append(out_d)
        inp = out_d
    preds = inp @ model.dense_w.T + model.dense_b
    return preds, BatchCache(xs, np.asarray(lengths), layer_inputs, gates,
                             masks, dropped)
