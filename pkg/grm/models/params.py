"""
Named parameter storage

All learnable tensors of a network live in one ParameterStore under dotted
names (`encoder.layer2.attn.W_q`, `head.center.stage1.kernel`, ...). The
names are what checkpoints, gradient-check reports and the optimizer's
weight-decay grouping refer to.
"""
import logging
from typing import Dict, Iterator, Mapping, Sequence, Tuple

import numpy as np

from grm.autograd.tensor import Tensor
from grm.core.errors import ShapeError, UsageError

logger = logging.getLogger(__name__)


class ParameterStore:
    """Ordered mapping of parameter name -> leaf tensor (requires_grad=True)"""

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UsageError(f"unknown parameter '{name}'") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> Sequence[str]:
        return list(self._params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise UsageError(f"parameter '{name}' registered twice")
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def group(self, prefix: str) -> Dict[str, Tensor]:
        """Parameters whose name starts with `prefix.`"""
        dotted = prefix.rstrip(".") + "."
        return {name: t for name, t in self._params.items() if name.startswith(dotted)}

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    @property
    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """
        Copy values into the registered tensors (in place)

        Raises:
            UsageError: missing or unexpected names
            ShapeError: shape differs from the registered tensor
        """
        missing = sorted(set(self._params) - set(state))
        unexpected = sorted(set(state) - set(self._params))
        if missing or unexpected:
            raise UsageError(f"state does not match parameters (missing {missing}, unexpected {unexpected})")
        for name, value in state.items():
            tensor = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(f"parameter '{name}': stored shape {value.shape} != {tensor.shape}")
            tensor.data[...] = value
            tensor.zero_grad()
        logger.debug(f"Loaded {len(state)} parameters")


# ==================== Initializers ====================

def normal(rng: np.random.Generator, shape: Sequence[int], std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=tuple(shape))


def he_normal(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    """Kaiming normal for ReLU convolutions, fan-in over all but the first axis"""
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(tuple(shape))


def ones(shape: Sequence[int]) -> np.ndarray:
    return np.ones(tuple(shape))
