from . import checkpoint
from . import tensor
from .nn import (Adam, AdamState, ParamSet, adam_update, cosine_similarity, dense_forward,
                 leaky_relu, pairwise_cosine, uniform_init)
from .tensor import Tensor, as_tensor

__all__ = [
    "Adam", "AdamState", "ParamSet", "Tensor", "adam_update", "as_tensor", "checkpoint",
    "cosine_similarity", "dense_forward", "leaky_relu", "pairwise_cosine", "tensor",
    "uniform_init",
]
