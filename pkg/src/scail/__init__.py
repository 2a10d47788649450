"""Class-incremental learning with classifier weight scaling (ScaIL) and its fine-tuning baselines."""

from ._kernels import BACKEND
from .config import METHODS, RunConfig
from .metrics import averaged_incremental_accuracy, error_taxonomy, gil, score_bias, topk_accuracy
from .model import NetworkConfig, TrainSchedule, forward, init_model, train_state
from .protocol import run_incremental
from .rectifiers import build_scail_layer, rank_means, rank_of, scale_classifier

__version__ = "0.1.0"
