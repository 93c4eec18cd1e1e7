"""
Differentiable operations over `Tensor`.

Only bias-over-columns in `affine_pointwise` broadcasts; every other binary op requires
identical shapes. Subgradients at kinks are 0 (relu, abs) and max ties go to the lower index.
"""
import numpy as np

from salforge.autodiff.tensor import Tensor, DimensionError


def _require_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f'{op}: shape mismatch {a.shape} vs {b.shape}')


def _require_ndim(op, x: Tensor, ndim: int):
    if x.ndim != ndim:
        raise DimensionError(f'{op}: expected {ndim} dims, got shape {x.shape}')


def affine_pointwise(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-column affine map `W @ x + b`, i.e. a kernel-1 convolution over the point axis."""
    _require_ndim('affine_pointwise', x, 2)
    _require_ndim('affine_pointwise', weight, 2)
    _require_ndim('affine_pointwise', bias, 1)
    if weight.shape[1] != x.shape[0] or bias.shape[0] != weight.shape[0]:
        raise DimensionError(
            f'affine_pointwise: x {x.shape}, W {weight.shape}, b {bias.shape} are incompatible'
        )

    out = weight.data @ x.data + bias.data[:, None]

    def backward_fn(grad):
        return (
            weight.data.T @ grad if x.requires_grad else None,
            grad @ x.data.T if weight.requires_grad else None,
            grad.sum(axis=1) if bias.requires_grad else None,
        )

    return Tensor.from_op(out, 'affine_pointwise', (x, weight, bias), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, 'relu', (x,), lambda grad: (grad * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_shape('add', a, b)
    return Tensor.from_op(a.data + b.data, 'add', (a, b), lambda grad: (grad, grad))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_shape('sub', a, b)
    return Tensor.from_op(a.data - b.data, 'sub', (a, b), lambda grad: (grad, -grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape('mul', a, b)
    return Tensor.from_op(a.data * b.data, 'mul', (a, b), lambda grad: (grad * b.data, grad * a.data))


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, 'neg', (x,), lambda grad: (-grad,))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.dtype.type(factor)
    return Tensor.from_op(x.data * factor, 'scale', (x,), lambda grad: (grad * factor,))


def shift(x: Tensor, offset: float) -> Tensor:
    offset = x.dtype.type(offset)
    return Tensor.from_op(x.data + offset, 'shift', (x,), lambda grad: (grad,))


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, 'square', (x,), lambda grad: (2 * grad * x.data,))


def abs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor.from_op(np.abs(x.data), 'abs', (x,), lambda grad: (grad * sign,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, 'exp', (x,), lambda grad: (grad * out,))


def sum_all(x: Tensor) -> Tensor:
    out = np.array(x.data.sum(), dtype=x.dtype)
    return Tensor.from_op(out, 'sum_all', (x,), lambda grad: (np.full_like(x.data, grad),))


def mean_all(x: Tensor) -> Tensor:
    if x.size == 0:
        raise DimensionError('mean_all: empty tensor')
    count = x.size
    out = np.array(x.data.mean(), dtype=x.dtype)
    return Tensor.from_op(out, 'mean_all', (x,), lambda grad: (np.full_like(x.data, grad / count),))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    _require_ndim('concat_rows', a, 2)
    _require_ndim('concat_rows', b, 2)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f'concat_rows: column mismatch {a.shape} vs {b.shape}')
    split = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return Tensor.from_op(out, 'concat_rows', (a, b), lambda grad: (grad[:split], grad[split:]))


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f'slice_rows: [{start}:{stop}] out of range for shape {x.shape}')

    def backward_fn(grad):
        full = np.zeros_like(x.data)
        full[start:stop] = grad
        return (full,)

    return Tensor.from_op(x.data[start:stop], 'slice_rows', (x,), backward_fn)


def repeat_cols(v: Tensor, n: int) -> Tensor:
    """Replicate a length-C vector into a [C, n] matrix; backward sums over columns."""
    _require_ndim('repeat_cols', v, 1)
    if n < 1:
        raise DimensionError(f'repeat_cols: column count must be positive, got {n}')
    out = np.repeat(v.data[:, None], n, axis=1)
    return Tensor.from_op(out, 'repeat_cols', (v,), lambda grad: (grad.sum(axis=1),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f'reshape: cannot view {x.shape} as {shape}')
    return Tensor.from_op(x.data.reshape(shape), 'reshape', (x,), lambda grad: (grad.reshape(x.shape),))


def maxpool_pairs(x: Tensor) -> Tensor:
    """
    Kernel-2, stride-1 max over neighbouring columns with the last column replicated,
    so the output keeps all N columns. Not invariant to column permutations.
    """
    _require_ndim('maxpool_pairs', x, 2)
    if x.shape[1] < 1:
        raise DimensionError('maxpool_pairs: need at least one column')

    right = np.concatenate([x.data[:, 1:], x.data[:, -1:]], axis=1)
    take_left = x.data >= right
    out = np.where(take_left, x.data, right)

    def backward_fn(grad):
        full = grad * take_left
        full[:, 1:] += (grad * ~take_left)[:, :-1]
        return (full,)

    return Tensor.from_op(out, 'maxpool_pairs', (x,), backward_fn)


def global_maxpool(x: Tensor) -> Tensor:
    _require_ndim('global_maxpool', x, 2)
    if x.shape[1] < 1:
        raise DimensionError('global_maxpool: need at least one column')

    # argmax returns the first maximum, which is the lower-index tie rule
    winners = np.argmax(x.data, axis=1)
    rows = np.arange(x.shape[0])
    out = x.data[rows, winners]

    def backward_fn(grad):
        full = np.zeros_like(x.data)
        full[rows, winners] = grad
        return (full,)

    return Tensor.from_op(out, 'global_maxpool', (x,), backward_fn)
