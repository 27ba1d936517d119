from agcnn.training.adam import AdamState, adam_step
from agcnn.training.losses import (PHASE1, PHASE2, LossWeights, loss_attention,
                                   loss_classification, total_loss)
from agcnn.training.schedule import (LOG_COLUMNS, EpochRecord, TrainLog, TrainSchedule,
                                     batch_losses, run_schedule, train_step,
                                     validation_metrics)

__all__ = [
    "AdamState", "adam_step", "PHASE1", "PHASE2", "LossWeights", "loss_attention",
    "loss_classification", "total_loss", "LOG_COLUMNS", "EpochRecord", "TrainLog",
    "TrainSchedule", "batch_losses", "run_schedule", "train_step", "validation_metrics",
]
