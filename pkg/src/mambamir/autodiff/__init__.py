from . import ops
from .gradcheck import GradCheckError, GradCheckResult, grad_check
from .tensor import (Tape, Tensor, as_tensor, backward, default_dtype, get_default_dtype,
                     grad_enabled, no_grad)

__all__ = [
    "GradCheckError", "GradCheckResult", "Tape", "Tensor", "as_tensor", "backward",
    "default_dtype", "get_default_dtype", "grad_check", "grad_enabled", "no_grad", "ops",
]
