"""From-scratch attention encoder-decoder captioner."""

from .config import ModelConfig
from .encoder import TinyEncoder, load_feature_map, reference_encoder, save_feature_map
from .gradients import loss_and_gradients
from .model import ModelWeights
from .network import (
    AttentionState,
    GenerationResult,
    LstmState,
    attend,
    generate,
    init_state,
    lstm_step,
    word_distribution,
)
from .training import TrainingConfig, TrainResult, history_csv, train, validation_bleu

__all__ = [
    "AttentionState",
    "GenerationResult",
    "LstmState",
    "ModelConfig",
    "ModelWeights",
    "TinyEncoder",
    "TrainingConfig",
    "TrainResult",
    "attend",
    "generate",
    "history_csv",
    "init_state",
    "load_feature_map",
    "loss_and_gradients",
    "lstm_step",
    "reference_encoder",
    "save_feature_map",
    "train",
    "validation_bleu",
    "word_distribution",
]
