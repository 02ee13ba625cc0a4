"""Dense float64 tensors with a reverse-mode tape"""
from grm.autograd.tensor import Function, Tape, Tensor, as_tensor, get_tape, no_grad, op_scope, using_tape

__all__ = ["Function", "Tape", "Tensor", "as_tensor", "get_tape", "no_grad", "op_scope", "using_tape"]
