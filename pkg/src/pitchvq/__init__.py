"""Speech autoencoder with separate waveform and pitch codebooks."""

from .audio import Waveform, read_wav, write_wav
from .config import RunConfig, load_config, parse_config
from .corpus import GlobalCondition, Utterance, load_corpus
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    PitchVQError,
    ShapeError,
)
from .evaluate import EvalReport, estimate_f0, evaluate_corpus, log_f0_rmse
from .f0 import F0Track, read_f0, write_f0
from .model import VqVaeModel
from .synth import generate_corpus
from .training import (
    TrainState,
    load_checkpoint,
    save_checkpoint,
    schedule_eval,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EvalReport",
    "F0Track",
    "GlobalCondition",
    "NumericError",
    "PitchVQError",
    "RunConfig",
    "ShapeError",
    "TrainState",
    "Utterance",
    "VqVaeModel",
    "Waveform",
    "estimate_f0",
    "evaluate_corpus",
    "generate_corpus",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "log_f0_rmse",
    "parse_config",
    "read_f0",
    "read_wav",
    "save_checkpoint",
    "schedule_eval",
    "train",
    "write_f0",
    "write_wav",
]
