"""
Dense tensor with reverse-mode differentiation

A Tensor wraps a row-major float64 numpy array. Every differentiable
operation is a Function subclass; Function.apply runs the forward rule and,
when gradients are enabled and any input requires them, appends a TapeEntry
to the tape of the current execution context. Tape.backward replays the
entries in reverse order, each exactly once.

Tape policy:
    - one tape per execution context (contextvars); tapes are never shared
      between threads or concurrent trainers
    - backward() clears the tape unless retain_graph=True
    - leaf gradients accumulate across backward() calls until zero_grad()
    - no_grad() disables recording (inference, finite differences)

Non-finite values are rejected where they appear: a forward rule producing
NaN/Inf raises NonFiniteError naming the op and the active scope, and so does
a backward rule producing a non-finite gradient.
"""
from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from grm.core.errors import AutogradError, NonFiniteError, ShapeError

_tape_var: ContextVar[Optional["Tape"]] = ContextVar("grm_tape", default=None)
_grad_enabled: ContextVar[bool] = ContextVar("grm_grad_enabled", default=True)
_scope_var: ContextVar[Tuple[str, ...]] = ContextVar("grm_scope", default=())
_branch_var: ContextVar[Optional[List[bytes]]] = ContextVar("grm_branches", default=None)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the block without recording operations"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextmanager
def op_scope(name: str) -> Iterator[None]:
    """Label every op recorded in the block (shows up in NonFiniteError)"""
    token = _scope_var.set(_scope_var.get() + (name,))
    try:
        yield
    finally:
        _scope_var.reset(token)


def current_scope() -> Optional[str]:
    parts = _scope_var.get()
    return ".".join(parts) if parts else None


@contextmanager
def tracing_branches() -> Iterator[List[bytes]]:
    """
    Collect the branch taken by every piecewise op (relu, abs, clamp, max, min)

    Two evaluations with equal traces lie on the same smooth piece of the
    function, so a finite difference between them is meaningful.
    """
    trace: List[bytes] = []
    token = _branch_var.set(trace)
    try:
        yield trace
    finally:
        _branch_var.reset(token)


def record_branch(pattern: np.ndarray) -> None:
    trace = _branch_var.get()
    if trace is not None:
        trace.append(np.ascontiguousarray(pattern).tobytes())


def get_tape() -> "Tape":
    """Return the tape of the current execution context, creating it lazily"""
    tape = _tape_var.get()
    if tape is None:
        tape = Tape()
        _tape_var.set(tape)
    return tape


@contextmanager
def using_tape(tape: "Tape") -> Iterator["Tape"]:
    """Record into `tape` for the duration of the block"""
    token = _tape_var.set(tape)
    try:
        yield tape
    finally:
        _tape_var.reset(token)


class Tensor:
    """
    Dense float64 array with optional gradient

    Attributes:
        data: Row-major float64 array; product(shape) == data.size
        grad: Gradient buffer of the same shape, or None
        requires_grad: Whether backward() should produce a gradient
        node_id: Index of the producing entry on the tape (None for leaves)
        name: Optional label used in reports
    """

    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("Tensor", current_scope())
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _from_array(cls, array: np.ndarray) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.grad = None
        tensor.requires_grad = False
        tensor.node_id = None
        tensor.name = None
        return tensor

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(f".T expects a 2D tensor, got shape {self.shape}")
        return ops.transpose(self, (1, 0))

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._from_array(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, retain_graph: bool = False) -> None:
        get_tape().backward(self, retain_graph=retain_graph)

    # ---- operators ----
    def __add__(self, other: Any) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        return ops.neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return ops.power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return ops.getitem(self, index)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return ops.transpose(self, axes if axes else None)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return ops.tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def exp(self) -> "Tensor":
        return ops.exp(self)

    def log(self) -> "Tensor":
        return ops.log(self)


def as_tensor(value: Any) -> Tensor:
    """Wrap numbers and arrays as constant tensors; pass tensors through"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Context:
    """Scratch space a forward rule fills for its backward rule"""

    def __init__(self, needs_input_grad: Tuple[bool, ...] = ()):
        self.needs_input_grad = needs_input_grad
        self.saved: Dict[str, Any] = {}

    def save(self, **values: Any) -> None:
        self.saved.update(values)

    def __getattr__(self, key: str) -> Any:
        saved = self.__dict__.get("saved", {})
        if key in saved:
            return saved[key]
        raise AttributeError(key)


class Function:
    """
    Base class for differentiable operations

    Subclasses implement `forward(ctx, *arrays, **kwargs) -> ndarray` and
    `backward(ctx, grad) -> tuple` (one entry per tensor input, None where no
    gradient flows).
    """

    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        recording = is_grad_enabled() and any(t.requires_grad for t in inputs)
        ctx = Context(tuple(recording and t.requires_grad for t in inputs))
        with np.errstate(all="ignore"):
            out = cls.forward(ctx, *(t.data for t in inputs), **kwargs)
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(cls.__name__, current_scope())
        result = Tensor._from_array(out)
        if recording:
            result.requires_grad = True
            get_tape().record(cls, inputs, result, ctx)
        return result


@dataclass
class TapeEntry:
    node_id: int
    op: type
    inputs: Tuple[Tensor, ...]
    output: Tensor
    ctx: Context
    scope: Optional[str] = field(default=None)


class Tape:
    """Ordered record of operations; inputs always precede the ops using them"""

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: type, inputs: Sequence[Tensor], output: Tensor, ctx: Context) -> int:
        node_id = len(self.entries)
        output.node_id = node_id
        self.entries.append(TapeEntry(node_id, op, tuple(inputs), output, ctx, current_scope()))
        return node_id

    def clear(self) -> None:
        self.entries = []

    def owns(self, tensor: Tensor) -> bool:
        node_id = tensor.node_id
        return (
            node_id is not None
            and node_id < len(self.entries)
            and self.entries[node_id].output is tensor
        )

    def backward(self, loss: Tensor, retain_graph: bool = False) -> None:
        """
        Populate `.grad` on every requires_grad leaf reachable from `loss`

        Args:
            loss: Single-element tensor produced on this tape
            retain_graph: Keep the entries for another backward pass

        Raises:
            AutogradError: loss is not scalar or not on this tape
            NonFiniteError: a backward rule produced NaN/Inf
        """
        if loss.data.size != 1:
            raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad or not self.owns(loss):
            raise AutogradError("backward called on a tensor that is not on the tape (detached or already consumed)")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries[: loss.node_id + 1]):
            grad = grads.pop(id(entry.output), None)
            if grad is None:
                continue
            with np.errstate(all="ignore"):
                input_grads = entry.op.backward(entry.ctx, grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for tensor, input_grad in zip(entry.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                input_grad = np.asarray(input_grad, dtype=np.float64)
                if input_grad.shape != tensor.shape:
                    raise ShapeError(
                        f"{entry.op.__name__} backward returned shape {input_grad.shape} "
                        f"for an input of shape {tensor.shape}"
                    )
                if not np.all(np.isfinite(input_grad)):
                    raise NonFiniteError(entry.op.__name__, entry.scope, phase="backward")
                if self.owns(tensor):
                    key = id(tensor)
                    grads[key] = grads[key] + input_grad if key in grads else input_grad
                elif tensor.grad is None:
                    tensor.grad = input_grad.copy()
                else:
                    tensor.grad = tensor.grad + input_grad

        if not retain_graph:
            self.clear()


# Late import: ops builds on Tensor and Function defined above
from grm.autograd import ops  # noqa: E402
