import itertools
import threading
import networkx as nx
import numpy as np

from typing import Optional, Sequence, Tuple, Union

from core.errors import DimensionError

__all__ = ["Tensor", "Function", "Tape", "current_tape", "as_tensor"]


_uid_counter = itertools.count()
_local = threading.local()


def current_tape() -> Optional["Tape"]:
    """The tape active in this thread, if any."""
    return getattr(_local, "tape", None)


class Tensor:
    """Dense n-dimensional float64 array with an optional tape node.

    Attributes:
        data: the values, always a float64 numpy array.
        requires_grad: whether backward should produce a gradient for it.
        grad: accumulated gradient, same shape as data, or None.
        creator: the Function that produced this tensor on a tape (None for leaves).
        uid: unique id, used as the node key on the tape graph.
    """

    def __init__(self, data: Union[np.ndarray, float, Sequence],
                 requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional["Function"] = None
        self.name = name
        self.uid = next(_uid_counter)

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"[{self.__class__.__name__}{label}] {self.shape}"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        if grad.shape != self.data.shape:
            raise DimensionError("accumulate_grad",
                                 f"gradient {grad.shape} does not match {self.shape}")
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class of differentiable operations.

    Subclasses implement ``forward`` on numpy arrays and ``backward``, which maps
    the gradient of the output to one gradient (or None) per input.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{self.__class__.__name__}.forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{self.__class__.__name__}.backward")

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        tape = current_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            tape.record(fn, out)
        return out


class Tape:
    """Records operations while active and replays them backward.

    The graph is a ``networkx.DiGraph`` keyed by tensor uid, with edges from
    every input to the output it contributes to. A tape must only be used by
    the thread that activated it.

    Usage:
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
    """

    def __init__(self):
        self.graph = nx.DiGraph()
        self._previous = None

    def __enter__(self):
        self._previous = current_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tape = self._previous
        self._previous = None
        return False

    def __len__(self):
        return sum(1 for _, fn in self.graph.nodes(data="fn") if fn is not None)

    def record(self, fn: Function, out: Tensor):
        self.graph.add_node(out.uid, tensor=out, fn=fn)
        out.creator = fn
        for inp in fn.inputs:
            if inp.uid not in self.graph:
                self.graph.add_node(inp.uid, tensor=inp, fn=None)
            self.graph.add_edge(inp.uid, out.uid)

    def backward(self, loss: Tensor):
        """Populate ``grad`` of every requires_grad leaf that the loss depends on."""
        if loss.size != 1:
            raise DimensionError("backward", f"loss must be a scalar, got {loss.shape}")
        if loss.uid not in self.graph:
            return

        relevant = nx.ancestors(self.graph, loss.uid) | {loss.uid}
        order = list(nx.topological_sort(self.graph.subgraph(relevant)))

        grads = {loss.uid: np.ones_like(loss.data)}
        for uid in reversed(order):
            node = self.graph.nodes[uid]
            grad = grads.pop(uid, None)
            if grad is None:
                continue
            fn = node["fn"]
            if fn is None:
                tensor = node["tensor"]
                if tensor.requires_grad:
                    tensor.accumulate_grad(grad)
                continue
            for inp, g in zip(fn.inputs, fn.backward(grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.uid in grads:
                    grads[inp.uid] = grads[inp.uid] + g
                else:
                    grads[inp.uid] = g
