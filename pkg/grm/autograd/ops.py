"""
Differentiable operations

Each operation is a Function subclass with a numpy forward rule and an
explicit backward rule, plus a lower-case functional wrapper. Elementwise
binary operations follow numpy broadcasting; their gradients are summed
back to the input shapes.

GELU uses the tanh approximation
    gelu(x) = 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
which stays within 1e-3 of the exact x·Φ(x) form.
"""
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from grm.autograd.tensor import Context, Function, Tensor, as_tensor, record_branch
from grm.core.errors import DegenerateRowError, ShapeError, UsageError

ArrayLike = Union[Tensor, np.ndarray, float, int]

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715
# Blocked logits above the unmasked row max saturate here in the mask gradient
_MASK_GRAD_MAX_EXPONENT = 20.0


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ==================== Elementwise ====================

class Add(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a + b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return _unbroadcast(grad, ctx.a_shape), _unbroadcast(grad, ctx.b_shape)


class Sub(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ctx.save(a_shape=a.shape, b_shape=b.shape)
        return a - b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return _unbroadcast(grad, ctx.a_shape), _unbroadcast(-grad, ctx.b_shape)


class Mul(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ctx.save(a=a, b=b)
        return a * b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        grad_a = _unbroadcast(grad * ctx.b, ctx.a.shape) if ctx.needs_input_grad[0] else None
        grad_b = _unbroadcast(grad * ctx.a, ctx.b.shape) if ctx.needs_input_grad[1] else None
        return grad_a, grad_b


class Div(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ctx.save(a=a, b=b)
        return a / b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        grad_a = _unbroadcast(grad / ctx.b, ctx.a.shape) if ctx.needs_input_grad[0] else None
        grad_b = None
        if ctx.needs_input_grad[1]:
            grad_b = _unbroadcast(-grad * ctx.a / (ctx.b * ctx.b), ctx.b.shape)
        return grad_a, grad_b


class Neg(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        return -a

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (-grad,)


class Pow(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, exponent: float) -> np.ndarray:
        ctx.save(a=a, exponent=exponent)
        return a ** exponent

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.exponent * ctx.a ** (ctx.exponent - 1),)


class Exp(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        out = np.exp(a)
        ctx.save(out=out)
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.out,)


class Log(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        ctx.save(a=a)
        return np.log(a)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad / ctx.a,)


class Abs(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        ctx.save(sign=np.sign(a))
        record_branch(ctx.sign)
        return np.abs(a)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.sign,)


class Sigmoid(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        # tanh form never overflows
        out = 0.5 * (1.0 + np.tanh(0.5 * a))
        ctx.save(out=out)
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.out * (1.0 - ctx.out),)


class Relu(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        ctx.save(active=a > 0)
        record_branch(ctx.active)
        return np.where(a > 0, a, 0.0)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.active,)


class Gelu(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray) -> np.ndarray:
        inner = _GELU_C * (a + _GELU_K * a ** 3)
        t = np.tanh(inner)
        ctx.save(a=a, t=t)
        return 0.5 * a * (1.0 + t)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        a, t = ctx.a, ctx.t
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_K * a ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t ** 2) * d_inner
        return (grad * local,)


class Clamp(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, low: Optional[float], high: Optional[float]) -> np.ndarray:
        inside = np.ones(a.shape, dtype=bool)
        if low is not None:
            inside &= a >= low
        if high is not None:
            inside &= a <= high
        ctx.save(inside=inside)
        record_branch(inside)
        return np.clip(a, low, high)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad * ctx.inside,)


class Maximum(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        take_a = a >= b
        ctx.save(take_a=take_a, a_shape=a.shape, b_shape=b.shape)
        record_branch(take_a)
        return np.where(take_a, a, b)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (
            _unbroadcast(grad * ctx.take_a, ctx.a_shape),
            _unbroadcast(grad * ~ctx.take_a, ctx.b_shape),
        )


class Minimum(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        take_a = a <= b
        ctx.save(take_a=take_a, a_shape=a.shape, b_shape=b.shape)
        record_branch(take_a)
        return np.where(take_a, a, b)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (
            _unbroadcast(grad * ctx.take_a, ctx.a_shape),
            _unbroadcast(grad * ~ctx.take_a, ctx.b_shape),
        )


# ==================== Shape ====================

class Reshape(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        ctx.save(in_shape=a.shape)
        try:
            return a.reshape(shape).copy()
        except ValueError as e:
            raise ShapeError(f"cannot reshape {a.shape} into {shape}") from e

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad.reshape(ctx.in_shape),)


class Transpose(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, axes: Optional[Tuple[int, ...]]) -> np.ndarray:
        axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
        ctx.save(axes=axes)
        return np.ascontiguousarray(np.transpose(a, axes))

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (np.transpose(grad, np.argsort(ctx.axes)),)


class GetItem(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, index: Any) -> np.ndarray:
        ctx.save(in_shape=a.shape, index=index)
        return np.array(a[index], dtype=np.float64)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        full = np.zeros(ctx.in_shape)
        np.add.at(full, ctx.index, grad)
        return (full,)


class Concat(Function):
    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        ctx.save(sizes=[a.shape[axis] for a in arrays], axis=axis)
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        splits = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=ctx.axis))


class Sum(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
        ctx.save(in_shape=a.shape, axis=axis, keepdims=keepdims)
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        if ctx.axis is not None and not ctx.keepdims:
            axes = ctx.axis if isinstance(ctx.axis, tuple) else (ctx.axis,)
            axes = tuple(sorted(ax % len(ctx.in_shape) for ax in axes))
            for ax in axes:
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, ctx.in_shape).copy(),)


# ==================== Linear algebra ====================

class MatMul(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        ctx.save(a=a, b=b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        a, b = ctx.a, ctx.b
        grad_a = grad_b = None
        if ctx.needs_input_grad[0]:
            grad_a = _unbroadcast(np.matmul(grad, np.swapaxes(b, -1, -2)), a.shape)
        if ctx.needs_input_grad[1]:
            grad_b = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), grad), b.shape)
        return grad_a, grad_b


class Linear(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
            raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        ctx.save(x=x, weight=weight)
        return x @ weight + bias

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        grad_x = grad @ ctx.weight.T if ctx.needs_input_grad[0] else None
        grad_w = ctx.x.T @ grad if ctx.needs_input_grad[1] else None
        grad_b = grad.sum(axis=0) if ctx.needs_input_grad[2] else None
        return grad_x, grad_w, grad_b


class Conv2d(Function):
    """Cross-correlation of a C×H×W map with Cout×Cin×k×k kernels (zero padding)"""

    @staticmethod
    def forward(ctx: Context, x: np.ndarray, kernels: np.ndarray, stride: int, pad: int) -> np.ndarray:
        if x.ndim != 3 or kernels.ndim != 4:
            raise ShapeError(f"conv2d expects C×H×W input and 4D kernels, got {x.shape} and {kernels.shape}")
        cout, cin, kh, kw = kernels.shape
        if cin != x.shape[0]:
            raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernels expect {cin}")
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"conv2d: kernels must be square with odd size, got {kh}×{kw}")
        k = kh
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        out_h = (padded.shape[1] - k) // stride + 1
        out_w = (padded.shape[2] - k) // stride + 1
        if out_h <= 0 or out_w <= 0:
            raise ShapeError(f"conv2d: output size {out_h}×{out_w} for input {x.shape}, k={k}, stride={stride}, pad={pad}")

        windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
        windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
        cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * k * k, out_h * out_w)
        flat_kernels = kernels.reshape(cout, cin * k * k)
        ctx.save(
            cols=cols, flat_kernels=flat_kernels, kernel_shape=kernels.shape,
            padded_shape=padded.shape, x_shape=x.shape, out_hw=(out_h, out_w),
            stride=stride, pad=pad,
        )
        return (flat_kernels @ cols).reshape(cout, out_h, out_w)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        cout, cin, k, _ = ctx.kernel_shape
        out_h, out_w = ctx.out_hw
        stride, pad = ctx.stride, ctx.pad
        flat_grad = grad.reshape(cout, out_h * out_w)

        grad_kernels = None
        if ctx.needs_input_grad[1]:
            grad_kernels = (flat_grad @ ctx.cols.T).reshape(ctx.kernel_shape)

        grad_x = None
        if ctx.needs_input_grad[0]:
            grad_cols = (ctx.flat_kernels.T @ flat_grad).reshape(cin, k, k, out_h, out_w)
            grad_padded = np.zeros(ctx.padded_shape)
            for i in range(k):
                for j in range(k):
                    grad_padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_cols[:, i, j]
            h, w = ctx.x_shape[1], ctx.x_shape[2]
            grad_x = grad_padded[:, pad:pad + h, pad:pad + w]
        return grad_x, grad_kernels


# ==================== Normalization / attention ====================

class Standardize(Function):
    """(x − mean) / sqrt(var + eps) over the last axis"""

    @staticmethod
    def forward(ctx: Context, x: np.ndarray, eps: float) -> np.ndarray:
        mean_ = x.mean(axis=-1, keepdims=True)
        centered = x - mean_
        inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
        out = centered * inv_std
        ctx.save(out=out, inv_std=inv_std)
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        y = ctx.out
        g_mean = grad.mean(axis=-1, keepdims=True)
        gy_mean = (grad * y).mean(axis=-1, keepdims=True)
        return (ctx.inv_std * (grad - g_mean - y * gy_mean),)


class MaskedSoftmax(Function):
    """
    Softmax over the last axis restricted to entries with mask > 0

    out_j = m_j·exp(l_j − max) / Σ_k m_k·exp(l_k − max), the max taken over
    unmasked entries only. Blocked entries are exactly 0. The mask may carry
    gradient (straight-through division path); for a binary mask the forward
    value does not depend on whether it does.
    """

    @staticmethod
    def forward(ctx: Context, logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
        weights = np.broadcast_to(mask, logits.shape)
        allowed = weights > 0
        if not np.all(allowed.any(axis=-1)):
            raise DegenerateRowError("masked_softmax: a row has no unmasked entry (invalid division upstream)")
        row_max = np.max(np.where(allowed, logits, -np.inf), axis=-1, keepdims=True)
        shifted = logits - row_max
        weighted = np.exp(np.where(allowed, shifted, 0.0)) * weights
        total = weighted.sum(axis=-1, keepdims=True)
        out = weighted / total
        ctx.save(out=out, shifted=shifted, total=total, mask_shape=mask.shape)
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        out = ctx.out
        inner = (grad * out).sum(axis=-1, keepdims=True)
        grad_logits = out * (grad - inner) if ctx.needs_input_grad[0] else None
        grad_mask = None
        if ctx.needs_input_grad[1]:
            exposure = np.exp(np.minimum(ctx.shifted, _MASK_GRAD_MAX_EXPONENT))
            grad_mask = _unbroadcast(exposure / ctx.total * (grad - inner), ctx.mask_shape)
        return grad_logits, grad_mask


class GlobalMaxPool(Function):
    """Columnwise maximum of an n×c matrix; ties go to the lowest row"""

    @staticmethod
    def forward(ctx: Context, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"global_maxpool expects a non-empty n×c matrix, got {x.shape}")
        rows = np.argmax(x, axis=0)
        cols = np.arange(x.shape[1])
        ctx.save(rows=rows, cols=cols, in_shape=x.shape)
        record_branch(rows)
        return x[rows, cols]

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        full = np.zeros(ctx.in_shape)
        full[ctx.rows, ctx.cols] = grad
        return (full,)


class StraightThrough(Function):
    """Forward value `hard`, gradient passed unchanged to the soft input"""

    @staticmethod
    def forward(ctx: Context, soft: np.ndarray, hard: np.ndarray) -> np.ndarray:
        if hard.shape != soft.shape:
            raise ShapeError(f"straight_through: hard {hard.shape} vs soft {soft.shape}")
        return np.array(hard, dtype=np.float64)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return (grad,)


# ==================== Functional API ====================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Div.apply(as_tensor(a), as_tensor(b))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def power(a: Tensor, exponent: float) -> Tensor:
    return Pow.apply(a, exponent=float(exponent))


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def abs_(a: Tensor) -> Tensor:
    return Abs.apply(a)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def gelu(a: Tensor) -> Tensor:
    return Gelu.apply(a)


def clamp(a: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    return Clamp.apply(a, low=low, high=high)


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Maximum.apply(as_tensor(a), as_tensor(b))


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Minimum.apply(as_tensor(a), as_tensor(b))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a: Tensor, index: Any) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def tensor_sum(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weight, bias)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0, bias: Optional[Tensor] = None) -> Tensor:
    out = Conv2d.apply(x, kernels, stride=int(stride), pad=int(pad))
    if bias is not None:
        out = out + reshape(bias, (-1, 1, 1))
    return out


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    if eps <= 0:
        raise UsageError(f"layernorm eps must be positive, got {eps}")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm: gamma {gamma.shape} / beta {beta.shape} do not match width {x.shape[-1]}")
    return Standardize.apply(x, eps=float(eps)) * gamma + beta


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of a C×h×w map over its spatial positions"""
    channels, h, w = x.shape
    normed = Standardize.apply(reshape(x, (channels, h * w)), eps=float(eps))
    normed = normed * reshape(gamma, (channels, 1)) + reshape(beta, (channels, 1))
    return reshape(normed, (channels, h, w))


def masked_softmax(logits: Tensor, mask: Optional[ArrayLike] = None) -> Tensor:
    """
    Row softmax restricted to unmasked entries

    Args:
        logits: Scores; softmax runs over the last axis
        mask: Binary array or mask tensor broadcastable to logits;
            None means all ones (plain softmax through the same code path)

    Raises:
        DegenerateRowError: a row has no unmasked entry
    """
    if mask is None:
        mask = Tensor._from_array(np.ones(logits.shape[-2:] if logits.ndim >= 2 else logits.shape))
    return MaskedSoftmax.apply(logits, as_tensor(mask))


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, None)


def global_maxpool(x: Tensor) -> Tensor:
    return GlobalMaxPool.apply(x)


def global_avgpool(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"global_avgpool expects an n×c matrix, got {x.shape}")
    return mean(x, axis=0)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    return StraightThrough.apply(soft, hard=np.asarray(hard, dtype=np.float64))
