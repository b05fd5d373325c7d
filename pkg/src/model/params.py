"""
Model parameters - named Param registry, initialisation and checkpoint payloads

Parameter names are dotted paths (``block.0.wq``, ``head.out.bias``) so a
checkpoint is a flat mapping that can be validated against the shapes a
config implies.
"""

from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np
import structlog

from common.errors import ConfigError, NumericalError
from numcore.tensor import Param

logger = structlog.get_logger(__name__)

Shape = Tuple[int, ...]


class ModelParams:
    """Ordered collection of named Params owned by one model"""

    def __init__(self, params: List[Param]):
        self._params: Dict[str, Param] = {}
        for param in params:
            if param.name in self._params:
                raise ConfigError(f"duplicate parameter name {param.name!r}")
            self._params[param.name] = param

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def count(self) -> int:
        """Total number of scalar entries"""
        return int(sum(p.size for p in self))

    def shapes(self) -> Dict[str, Shape]:
        return {name: p.shape for name, p in self._params.items()}

    def alphas(self) -> List[Param]:
        return [p for name, p in self._params.items() if name.endswith("alpha")]

    def alpha_values(self) -> List[float]:
        return [float(p.data.reshape(-1)[0]) for p in self.alphas()]

    def clamp_alphas(self) -> None:
        for param in self.alphas():
            np.clip(param.data, 0.0, 1.0, out=param.data)

    def check_finite(self) -> None:
        for name, param in self._params.items():
            if not np.all(np.isfinite(param.data)):
                raise NumericalError("parameter became non-finite", param_name=name)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, values: Mapping[str, np.ndarray]) -> None:
        for name, param in self._params.items():
            # in place, so Param objects held elsewhere see the new values
            param.data[...] = values[name]

    def to_payload(self) -> Dict[str, dict]:
        return {name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()} for name, p in self._params.items()}

    @classmethod
    def from_payload(cls, payload: Mapping[str, dict], expected: Mapping[str, Shape]) -> "ModelParams":
        """Rebuild params from a checkpoint, checking names and shapes against ``expected``"""
        missing = sorted(set(expected) - set(payload))
        unexpected = sorted(set(payload) - set(expected))
        if missing or unexpected:
            raise ConfigError(f"checkpoint params do not match config: missing={missing} unexpected={unexpected}")
        params = []
        for name, shape in expected.items():
            entry = payload[name]
            if tuple(entry["shape"]) != tuple(shape):
                raise ConfigError(f"checkpoint param {name!r} has shape {tuple(entry['shape'])}, config needs {tuple(shape)}")
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ConfigError(f"checkpoint param {name!r} holds {values.size} values for shape {tuple(shape)}")
            params.append(Param(name, values.reshape(shape)))
        return cls(params)


def init_value(name: str, shape: Shape, rng: np.random.Generator, alpha0: float) -> np.ndarray:
    """Initial value chosen from the parameter's role, which its name encodes"""
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "alpha":
        return np.full(shape, alpha0)
    if leaf == "gain":
        return np.ones(shape)
    if leaf == "bias":
        return np.zeros(shape)
    fan_in = shape[-1]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(shapes: Mapping[str, Shape], rng: np.random.Generator, alpha0: float) -> ModelParams:
    params = ModelParams([Param(name, init_value(name, shape, rng, alpha0)) for name, shape in shapes.items()])
    logger.debug("parameters initialised", tensors=len(params), entries=params.count())
    return params
