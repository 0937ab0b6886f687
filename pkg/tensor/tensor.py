"""
Dense row-major tensor type and the gradient tape used for reverse-mode differentiation.

Tensors are immutable: every operation produces a new Tensor. When a GradTape is
active and an operation consumes a tensor the tape knows about, the operation is
appended to the tape together with a rule mapping the output gradient to input
gradients. backward() replays that list in reverse.
"""
import contextvars
import itertools
from dataclasses import dataclass

import numpy as np

from utils.config import DEFAULT_DTYPE
from utils.errors import InvalidShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
MAX_ELEMENTS = 2 ** 62

_handles = itertools.count(1)
_active_tape = contextvars.ContextVar("active_grad_tape", default=None)


def _as_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in SUPPORTED_DTYPES:
        raise InvalidShapeError(f"unsupported dtype {dtype}; expected float32 or float64")
    return dtype


class Tensor:
    """Immutable N-dimensional float array with an optional tape handle."""

    __slots__ = ("data", "grad_id")

    def __init__(self, data, dtype=None, grad_id=None):
        array = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
        if array.dtype not in SUPPORTED_DTYPES:
            array = array.astype(DEFAULT_DTYPE)
        if array.ndim == 0:
            array = array.reshape(1)
        if any(extent < 1 for extent in array.shape):
            raise InvalidShapeError(f"all extents must be >= 1, got {array.shape}")
        array = np.ascontiguousarray(array)
        array.flags.writeable = False
        self.data = array
        self.grad_id = grad_id

    @classmethod
    def _wrap(cls, array, grad_id=None):
        # Internal constructor for kernel results; takes ownership without copying.
        tensor = cls.__new__(cls)
        array = np.ascontiguousarray(array)
        if array.ndim == 0:
            array = array.reshape(1)
        array.flags.writeable = False
        tensor.data = array
        tensor.grad_id = grad_id
        return tensor

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return int(self.data.size)

    def numpy(self):
        """Return a writable copy of the buffer."""
        return np.array(self.data, copy=True)

    def item(self):
        if self.size != 1:
            raise InvalidShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tracked = f", grad_id={self.grad_id}" if self.grad_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tracked})"


# Initializers for tensor_create

@dataclass(frozen=True)
class Zeros:
    pass


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class SeededUniform:
    seed: int
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class SeededNormal:
    seed: int
    mean: float = 0.0
    std: float = 1.0


def philox(seed):
    """Counter-based generator; identical streams across runs and platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def check_shape(shape):
    shape = tuple(int(extent) for extent in shape)
    if not shape:
        raise InvalidShapeError("shape must have at least one extent")
    if any(extent < 1 for extent in shape):
        raise InvalidShapeError(f"all extents must be >= 1, got {list(shape)}")
    total = 1
    for extent in shape:
        total *= extent
        if total > MAX_ELEMENTS:
            raise InvalidShapeError(f"product of extents {list(shape)} overflows")
    return shape


def tensor_create(shape, init=Zeros(), dtype=DEFAULT_DTYPE):
    """
    Create a tensor of the given shape and fill.

    Args:
        shape: Sequence of positive extents
        init: Zeros(), Constant(v), SeededUniform(seed, low, high) or SeededNormal(seed, mean, std)
        dtype: float32 or float64

    Returns:
        Tensor: New tensor, not tracked by any tape
    """
    shape = check_shape(shape)
    dtype = _as_dtype(dtype)
    if isinstance(init, Zeros):
        array = np.zeros(shape, dtype=dtype)
    elif isinstance(init, Constant):
        array = np.full(shape, init.value, dtype=dtype)
    elif isinstance(init, SeededUniform):
        array = philox(init.seed).uniform(init.low, init.high, size=shape).astype(dtype)
    elif isinstance(init, SeededNormal):
        array = philox(init.seed).normal(init.mean, init.std, size=shape).astype(dtype)
    else:
        raise TypeError(f"unknown initializer {init!r}")
    return Tensor._wrap(array)


@dataclass
class TapeNode:
    op: str
    output_id: int
    input_ids: tuple
    backward_rule: object


class GradTape:
    """
    Append-only record of differentiable operations.

    Use as a context manager; one tape per thread. Tensors join the tape via
    watch(); every op consuming a watched (or derived) tensor is recorded.
    """

    def __init__(self):
        self.nodes = []
        self.gradients = {}
        self._known = set()
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def watch(self, tensor):
        """Return a tracked alias of `tensor` (same buffer, new leaf handle)."""
        handle = next(_handles)
        self._known.add(handle)
        return Tensor._wrap(tensor.data, grad_id=handle)

    def tracks(self, tensor):
        return tensor.grad_id is not None and tensor.grad_id in self._known

    def record(self, op, inputs, backward_rule):
        handle = next(_handles)
        input_ids = tuple(t.grad_id if self.tracks(t) else None for t in inputs)
        self.nodes.append(TapeNode(op, handle, input_ids, backward_rule))
        self._known.add(handle)
        return handle

    def gradient(self, tensor):
        grad = self.gradients.get(tensor.grad_id)
        return None if grad is None else Tensor._wrap(grad)


def record_op(op, result, inputs, backward_rule):
    """
    Wrap a kernel result and record it on the active tape when needed.

    Args:
        op: Operation name, for debugging
        result: numpy array computed by the kernel
        inputs: Input tensors, in the order backward_rule returns gradients
        backward_rule: Callable taking the output gradient array and returning
            one gradient array (or None) per input

    Returns:
        Tensor: The result, carrying a tape handle if recorded
    """
    tape = _active_tape.get()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        return Tensor._wrap(result, grad_id=tape.record(op, inputs, backward_rule))
    return Tensor._wrap(result)


def backward(loss, tape=None):
    """
    Reverse-mode sweep from a scalar loss.

    Args:
        loss: Single-element tensor produced under `tape`
        tape: GradTape that recorded the computation (defaults to the active one)

    Returns:
        dict: grad_id -> gradient array for every tracked tensor reachable from loss
    """
    tape = tape if tape is not None else _active_tape.get()
    if loss.size != 1:
        raise InvalidShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None or not tape.tracks(loss):
        raise InvalidShapeError("loss was not recorded on the given tape")

    grads = {loss.grad_id: np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        upstream = grads.pop(node.output_id, None)
        if upstream is None:
            continue
        tape.gradients[node.output_id] = upstream
        input_grads = node.backward_rule(upstream)
        for input_id, grad in zip(node.input_ids, input_grads):
            if input_id is None or grad is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + grad
            else:
                grads[input_id] = np.asarray(grad)
    tape.gradients.update(grads)
    return dict(tape.gradients)
