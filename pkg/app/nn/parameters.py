"""Named weight tensors and their gradient buffers."""

from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import KeySetMismatch, ShapeMismatch

Initializer = Callable[[np.random.Generator, Tuple[int, ...]], np.ndarray]


def zeros(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape)


def ones(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.ones(shape)


def he_uniform(fan_in: int) -> Initializer:
    limit = np.sqrt(6.0 / fan_in)

    def init(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-limit, limit, size=shape)

    return init


def uniform(limit: float) -> Initializer:
    def init(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-limit, limit, size=shape)

    return init


class Parameters:
    """
    Ordered collection of weight tensors keyed by layer path, e.g. ``egm/head/conv1/kernel``.

    Layers declare their tensors while the network is built. With an ``rng`` the
    declaration initialises a new tensor; without one the tensor must already be
    present, which is how loaded weights are bound to a freshly built network.
    Batch-norm moving statistics are stored here too but are not trainable.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.tensors: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.trainable: Dict[str, bool] = {}

    def declare(
        self,
        name: str,
        shape: Tuple[int, ...],
        init: Initializer,
        rng: Optional[np.random.Generator],
        trainable: bool = True,
    ) -> str:
        shape = tuple(int(s) for s in shape)
        if rng is None:
            if name not in self.tensors:
                raise KeySetMismatch(f"Parameter {name} is missing")
            if self.tensors[name].shape != shape:
                raise KeySetMismatch(f"Parameter {name} has shape {self.tensors[name].shape}, expected {shape}")
            self.trainable[name] = trainable
            return name
        if name in self.tensors:
            raise KeySetMismatch(f"Parameter {name} declared twice")
        self.add(name, init(rng, shape), trainable)
        return name

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        self.tensors[name] = np.ascontiguousarray(value, dtype=self.dtype)
        self.trainable[name] = trainable
        if trainable:
            self.grads[name] = np.zeros_like(self.tensors[name])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeySetMismatch(f"Parameter {name} is missing")
        if np.shape(value) != self.tensors[name].shape:
            raise ShapeMismatch(f"Parameter {name}: shape {np.shape(value)} != {self.tensors[name].shape}")
        self.tensors[name] = np.ascontiguousarray(value, dtype=self.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def keys(self) -> List[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self.tensors.items()}

    def trainable_names(self) -> List[str]:
        return [name for name in self.tensors if self.trainable[name]]

    def trainable_tensors(self) -> Dict[str, np.ndarray]:
        return {name: self.tensors[name] for name in self.trainable_names()}

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grads(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def count(self) -> int:
        return int(sum(tensor.size for tensor in self.tensors.values()))

    def copy(self) -> "Parameters":
        clone = Parameters(self.dtype)
        for name, tensor in self.tensors.items():
            clone.add(name, tensor.copy(), self.trainable[name])
        return clone

    def astype(self, dtype) -> "Parameters":
        clone = Parameters(dtype)
        for name, tensor in self.tensors.items():
            clone.add(name, tensor, self.trainable[name])
        return clone

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(t))) for t in self.tensors.values())


class ParameterShapes(Parameters):
    """Records the declared key set and shapes without allocating any weights."""

    def __init__(self):
        super().__init__()
        self.declared: Dict[str, Tuple[int, ...]] = {}

    def declare(self, name, shape, init, rng, trainable=True):
        if name in self.declared:
            raise KeySetMismatch(f"Parameter {name} declared twice")
        self.declared[name] = tuple(int(s) for s in shape)
        self.trainable[name] = trainable
        return name
