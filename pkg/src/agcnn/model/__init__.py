from agcnn.model.agcnn import (
    AgcnnModel,
    ForwardOutputs,
    attention_forward,
    classification_forward,
    full_forward,
    localization_forward_and_visualize,
    mask,
)
from agcnn.model.blocks import feature_normalize, multi_scale_block
from agcnn.model.config import ABLATION_LABELS, ABLATIONS, ModelConfig

__all__ = [
    "ABLATIONS",
    "ABLATION_LABELS",
    "AgcnnModel",
    "ForwardOutputs",
    "ModelConfig",
    "attention_forward",
    "classification_forward",
    "feature_normalize",
    "full_forward",
    "localization_forward_and_visualize",
    "mask",
    "multi_scale_block",
]
