from .layers import ConvLSTMCell, NonLocalBlock, pairwise_relu_sum
from .network import (
    VARIANTS,
    FutureDecoder,
    Interaction,
    ModelConfig,
    PastEncoder,
    SemanticExtractor,
    TrajectoryNet,
    batch_inputs,
    rasterize_past,
    seed_field,
)

__all__ = [
    "VARIANTS",
    "ConvLSTMCell",
    "FutureDecoder",
    "Interaction",
    "ModelConfig",
    "NonLocalBlock",
    "PastEncoder",
    "SemanticExtractor",
    "TrajectoryNet",
    "batch_inputs",
    "pairwise_relu_sum",
    "rasterize_past",
    "seed_field",
]
