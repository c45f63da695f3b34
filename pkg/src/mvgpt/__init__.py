"""Video captioning with bidirectional utterance-generation pretraining, on a numpy autodiff core."""
from .config import ModelConfig, TrainConfig
from .model import MVGPT

__all__ = ["ModelConfig", "TrainConfig", "MVGPT"]
__version__ = "0.1.0"
