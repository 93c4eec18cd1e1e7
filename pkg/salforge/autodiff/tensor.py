"""
Minimal define-by-run reverse-mode differentiation.

Every operation on tensors that require gradients records a `Node` on its output. The
graph is never stored globally: `Graph.trace` rebuilds the topological order from the
loss when `backward` runs, so each forward pass builds a fresh graph.
"""
import contextlib
import threading
import typing

import numpy as np

FLOAT32 = np.float32
FLOAT64 = np.float64

_state = threading.local()


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def default_dtype():
    return getattr(_state, 'dtype', FLOAT32)


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def precision(dtype):
    """Switch the dtype of newly created tensors for the current thread (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in (FLOAT32, FLOAT64):
        raise ValueError(f'unsupported precision {dtype}')
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad():
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Node:
    __slots__ = ('op', 'inputs', 'backward_fn')

    def __init__(self, op: str, inputs: typing.Tuple['Tensor', ...], backward_fn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn

    def __repr__(self):
        return f'Node({self.op}, inputs={len(self.inputs)})'


class Tensor:

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: typing.Optional[np.ndarray] = None
        self.node: typing.Optional[Node] = None

    @classmethod
    def from_op(cls, data: np.ndarray, op: str, inputs, backward_fn) -> 'Tensor':
        out = cls.__new__(cls)
        out.data = np.asarray(data)
        out.grad = None
        out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        out.node = Node(op, tuple(inputs), backward_fn) if out.requires_grad else None
        return out

    @property
    def shape(self) -> typing.Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f'item() needs a single-element tensor, got shape {self.shape}')

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise DimensionError(f'gradient shape {grad.shape} does not match tensor shape {self.shape}')
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def backward(self):
        backward(self)

    def __add__(self, other):
        from salforge.autodiff import functional
        return functional.add(self, other)

    def __sub__(self, other):
        from salforge.autodiff import functional
        return functional.sub(self, other)

    def __mul__(self, other):
        from salforge.autodiff import functional
        return functional.mul(self, other)

    def __neg__(self):
        from salforge.autodiff import functional
        return functional.neg(self)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}, dtype={self.dtype}{flag})'


class Graph:
    """Tensors reachable from an output, inputs always before the tensors computed from them."""

    def __init__(self, order: typing.List[Tensor]):
        self.order = order

    @classmethod
    def trace(cls, output: Tensor) -> 'Graph':
        order = []
        visited = set()
        # iterative post-order DFS, network depth would blow the recursion limit otherwise
        stack = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in reversed(tensor.node.inputs):
                    if id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.order)

    def backward(self, output: Tensor):
        grads = {id(output): np.ones_like(output.data)}
        for tensor in reversed(self.order):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            if tensor.node is None:
                tensor.accumulate_grad(grad)
                continue

            input_grads = tensor.node.backward_fn(grad)
            for parent, parent_grad in zip(tensor.node.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad


def backward(loss: Tensor):
    if loss.size != 1:
        raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        return
    Graph.trace(loss).backward(loss)
