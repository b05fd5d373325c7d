"""
Tensor and tape - dense float64 arrays with reverse-mode gradients

Every differentiable op in ``numcore.ops`` returns a Tensor carrying a TapeNode
that links it to its inputs. ``backward`` walks those links in reverse
topological order, accumulates gradients into every reachable Param and then
clears the tape so the same loss cannot be replayed.
"""

import contextlib
import contextvars
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from common.errors import UsageError

logger = structlog.get_logger(__name__)

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward ops without recording a tape (evaluation, finite differences)"""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class TapeNode:
    """One recorded op: its inputs and the closure mapping dOut to dInputs"""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "node", "_consumed")

    def __init__(self, data, node: Optional[TapeNode] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node
        self._consumed = False

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
    def tracks_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        op = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, op={op})"


class Param(Tensor):
    """Named learnable leaf; ``grad`` always matches ``data`` in shape"""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def tracks_grad(self) -> bool:
        return True

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, attaching a tape node only when some input needs gradients"""
    if not is_grad_enabled() or not any(t.tracks_grad for t in inputs):
        return Tensor(data)
    return Tensor(data, TapeNode(op, tuple(inputs), backward_fn))


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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
            for parent in tensor.node.inputs:
                if parent.node is not None and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Param]] = None) -> None:
    """Populate ``grad`` of every Param reachable from a scalar loss.

    Params passed in ``params`` are zeroed first, so any of them that the loss
    does not depend on end with an exactly-zero gradient.
    """
    if loss.node is None:
        if loss._consumed:
            raise UsageError("backward called twice on the same loss without a new forward pass")
        raise UsageError("loss was not produced by taped forward ops")
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")

    if params is not None:
        for param in params:
            param.zero_grad()

    order = _topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for tensor in reversed(order):
        grad_out = grads.pop(id(tensor), None)
        if grad_out is None:
            continue
        node = tensor.node
        input_grads = node.backward_fn(grad_out)
        for parent, grad in zip(node.inputs, input_grads):
            if grad is None or not parent.tracks_grad:
                continue
            if isinstance(parent, Param):
                parent.grad = parent.grad + grad.reshape(parent.data.shape)
            else:
                key = id(parent)
                grads[key] = grads[key] + grad if key in grads else grad

    for tensor in order:
        tensor.node = None
    loss._consumed = True
    logger.debug("backward complete", tape_nodes=len(order))
