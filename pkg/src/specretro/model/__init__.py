from specretro.model.checkpoint import (
    CheckpointError,
    CheckpointVersionError,
    CorruptCheckpointError,
    VocabularyMismatchError,
    load,
    save,
)
from specretro.model.config import ModelConfig
from specretro.model.loss import TrainBatch, make_batch, medusa_loss, source_ids
from specretro.model.network import (
    DecoderCache,
    LengthOverflowError,
    Seq2SeqTransformer,
    TokenRangeError,
    freeze,
    init_model,
)
from specretro.model.params import count_params, enumerate_params, param_breakdown
from specretro.model.training import TrainingDivergedError, TrainLog, TrainSchedule, evaluate_loss, train

__all__ = [
    "CheckpointError",
    "CheckpointVersionError",
    "CorruptCheckpointError",
    "DecoderCache",
    "LengthOverflowError",
    "ModelConfig",
    "Seq2SeqTransformer",
    "TokenRangeError",
    "TrainBatch",
    "TrainLog",
    "TrainSchedule",
    "TrainingDivergedError",
    "VocabularyMismatchError",
    "count_params",
    "enumerate_params",
    "evaluate_loss",
    "freeze",
    "init_model",
    "load",
    "make_batch",
    "medusa_loss",
    "param_breakdown",
    "save",
    "source_ids",
    "train",
]
