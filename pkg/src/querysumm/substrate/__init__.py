from . import ops
from .gradcheck import finite_diff_grad, finite_diff_params, rel_error
from .ops import STTape, cross_entropy_soft, gumbel_softmax_st
from .optim import AdamState, MissingGradientError, ParamStore, adam_step
from .tensor import NonFiniteError, ShapeError, Tensor, backward, no_grad

__all__ = [
    "AdamState", "MissingGradientError", "NonFiniteError", "ParamStore", "STTape",
    "ShapeError", "Tensor", "adam_step", "backward", "cross_entropy_soft",
    "finite_diff_grad", "finite_diff_params", "gumbel_softmax_st", "no_grad", "ops",
    "rel_error",
]
