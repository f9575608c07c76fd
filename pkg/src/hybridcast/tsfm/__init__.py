"""Toy-scale probabilistic MoE decoder-only forecaster.

Multi-scale patch tokenization, joint patch/calendar/frequency embeddings, a
causal transformer with mixture-of-experts feed-forward blocks, a Student-T
output head trained by NLL, and recursive multi-patch inference.
"""

from .config import ModelConfig
from .forecaster import ForecastOutput, TsfmForecaster, embed_series, forecast
from .losses import StudentTParams, student_t_nll
from .network import forward, grad, loss_and_grad
from .params import Parameters, init_params, load_params, save_params
from .tokenizer import PatchToken, tokenize
from .training import TrainResult, train

__all__ = [
    "ModelConfig", "PatchToken", "tokenize", "Parameters", "init_params",
    "save_params", "load_params", "StudentTParams", "student_t_nll",
    "forward", "grad", "loss_and_grad", "train", "TrainResult",
    "forecast", "embed_series", "ForecastOutput", "TsfmForecaster",
]
