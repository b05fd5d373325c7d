"""Graph transformer network and its parameter registry."""

from model.gritlp import ModelConfig, build_params, count_params, forward, param_shapes
from model.params import ModelParams

__all__ = ["ModelConfig", "ModelParams", "build_params", "count_params", "forward", "param_shapes"]
