from .layers import MLP, Attention, Conv, Linear, Module, Norm, multi_head_attention
from .networks import (
    DOWNSAMPLE_2D,
    AttentionPool,
    Decoder2D,
    Decoder3D,
    Encoder2D,
    Encoder3D,
    Gate,
    Raster,
    TextQuery,
    VoxelInput,
    voxel_input,
)
from .core import GROUPS, LanguageGuidedModel, ModelConfig
