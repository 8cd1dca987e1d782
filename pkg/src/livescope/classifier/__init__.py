"""Live vs VoD classification: the LSTM/MLP network and a periodicity baseline."""

from .baseline import BaselineModel, autocorr_peak_lags, rate_series, unbiased_autocorr
from .gradcheck import check_gradients, numerical_gradients, relative_error
from .lstm import (
    LstmParams,
    MlpParams,
    Params,
    backward,
    bce_loss,
    forward,
    forward_logits,
    init_params,
    predict_proba,
    zero_params,
)
from .model import LiveVodModel, ModelFormatError, Prediction, load_model, save_model
from .train import Adam, ConfigError, TrainConfig, TrainResult, confusion_matrix, train

__all__ = [
    "Adam",
    "BaselineModel",
    "ConfigError",
    "LiveVodModel",
    "LstmParams",
    "MlpParams",
    "ModelFormatError",
    "Params",
    "Prediction",
    "TrainConfig",
    "TrainResult",
    "autocorr_peak_lags",
    "backward",
    "bce_loss",
    "check_gradients",
    "confusion_matrix",
    "forward",
    "forward_logits",
    "init_params",
    "load_model",
    "numerical_gradients",
    "predict_proba",
    "rate_series",
    "relative_error",
    "save_model",
    "train",
    "unbiased_autocorr",
    "zero_params",
]
