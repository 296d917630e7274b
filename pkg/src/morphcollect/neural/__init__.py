"""Character-level neural inflector: a 2-layer LSTM encoder-decoder trained on
verified wordforms, with length-normalized uncertainty for active learning.
"""

from .vocab import PAD, BOS, EOS, SEP, SEP2, UNK, Vocabulary
from .encoding import encode, training_example, TrainingExample
from .model import InflectorModel, Prediction, TrainConfig, train, rank_by_uncertainty
from .serialize import save_model, load_model

__all__ = [
    "PAD", "BOS", "EOS", "SEP", "SEP2", "UNK",
    "Vocabulary", "encode", "training_example", "TrainingExample",
    "InflectorModel", "Prediction", "TrainConfig", "train",
    "rank_by_uncertainty", "save_model", "load_model",
]
