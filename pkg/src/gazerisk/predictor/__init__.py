"""Intention model, multimodal trajectory model, trajectory filter and baselines."""

from .bundle import (
    ModelBundle,
    TrainedModel,
    encode_context,
    ff_lstm_predict,
    intent_probs,
    load_model,
    mode_trajectories,
    mtp_lstm_predict,
    multipath_outputs,
    predict_intention,
    predict_multimodal,
    predict_trajectory,
    single_trajectories,
)
from .ctra import ctra_batch, ctra_from_window, ctra_positions, ctra_predict, estimate_motion
from .features import FEATURE_SETS, FeatureSet, Normalizer, model_inputs
from .models import ContextEncoder, FeedbackNet, IntentionNet, MultiPathNet, TrajectoryNet
from .modes import IntentionDist, ModeSet, filter_trajectory
from .training import TrainConfig, train_di, train_ff, train_model, train_mt, train_mtp

__all__ = [
    "FEATURE_SETS",
    "ContextEncoder",
    "FeatureSet",
    "FeedbackNet",
    "IntentionDist",
    "IntentionNet",
    "ModeSet",
    "ModelBundle",
    "MultiPathNet",
    "Normalizer",
    "TrainConfig",
    "TrainedModel",
    "TrajectoryNet",
    "ctra_batch",
    "ctra_from_window",
    "ctra_positions",
    "ctra_predict",
    "encode_context",
    "estimate_motion",
    "ff_lstm_predict",
    "filter_trajectory",
    "intent_probs",
    "load_model",
    "mode_trajectories",
    "model_inputs",
    "mtp_lstm_predict",
    "multipath_outputs",
    "predict_intention",
    "predict_multimodal",
    "predict_trajectory",
    "single_trajectories",
    "train_di",
    "train_ff",
    "train_model",
    "train_mt",
    "train_mtp",
]
