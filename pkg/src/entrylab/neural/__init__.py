"""From-scratch sequence-learning stack: recurrent cells with explicit
forward/backward passes, dropout, mean-squared sequence loss, ADAM with a
decaying learning rate, and per-tensor gradient-norm clipping."""

from .lstm import (  # noqa: F401
    LstmCellState,
    LstmLayerParams,
    LstmModel,
    dropout_forward,
    forward_sequence,
    init_model,
    init_stream_state,
    lstm_cell_forward,
    stream_step,
)
from .train import (  # noqa: F401
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    backward_sequence,
    clip_gradients,
    learning_rate,
    sequence_loss,
    train,
)
from .model_io import load_model, save_model  # noqa: F401
