"""Dense float64 tensors with tape-based reverse-mode gradients."""

from numcore.tensor import Param, Tensor, TapeNode, backward, no_grad

__all__ = ["Param", "Tensor", "TapeNode", "backward", "no_grad"]
