from .config import STAGES, ConfigError, TrainConfig, load_config, parse_pairs
from .metrics import MetricsSink, SegmentationScores, confusion_matrix, read_metrics, segmentation_scores
from .loop import (
    FINETUNE_GROUPS,
    PRETRAIN_GROUPS,
    Session,
    TrainingAborted,
    build_textbank,
    evaluate,
    finetune,
    finetune_session,
    load_for_eval,
    model_config,
    no_decay,
    predict,
    pretrain,
    read_meta,
)
