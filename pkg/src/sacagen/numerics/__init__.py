from .tensor import (
    Tensor, ShapeMismatch, NonScalarLoss, NonFiniteValue,
    add, neg, mul, matmul, sigmoid, tanh, relu, softmax, masked_softmax, layer_norm,
    concat, gather, getitem, masked_fill, cross_entropy, dropout, reshape, swapaxes,
    transpose, broadcast_to, sum_, mean, backward, no_grad, grad_enabled, as_tensor, primitive,
    set_default_dtype, get_default_dtype, default_dtype, set_debug,
)
from .optim import Parameter, AdamW, LinearSchedule, MissingGradient
from .gradcheck import finite_diff_check, relative_error, GradCheckReport
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError
