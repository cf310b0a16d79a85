from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import ClassificationReport
from .model import (
    EvaluatorModel,
    NormStats,
    NumericalError,
    backward,
    cross_entropy,
    cross_entropy_from_logits,
    destandardize,
    forward,
    forward_batch,
    softmax,
    standardize,
)
from .optim import AdamWState, adamw_step, clip_global_norm
from .training import (
    DEFAULT_GRID,
    EarlyStopping,
    GridResult,
    TrainConfig,
    TrainingDivergence,
    TrainResult,
    augment,
    evaluate,
    grid_search,
    train,
)
