"""Low-rank approximation vs. neural collaborative filtering, from scratch in numpy."""
from .dataset import (
    InteractionDataset,
    IndexMaps,
    RawRating,
    RatingTable,
    binarize_explicit,
    binarize_implicit,
    build_index_maps,
    load_ratings,
    prepare,
    split_train_test,
)
from .evaluation import EvalReport, evaluate
from .factorization import LatentFactors, init_factors, score, score_all_items
from .models import LowRankModel, NeuralModel, build_neural_model, load_model, save_model
from .training import TrainConfig, adam_step, train_model

__version__ = "0.1.0"
