"""Reverse-mode differentiation over the pipeline's operation set, plus the
reconstruction network and its optimizers."""
from echobeam.autodiff.net import Architecture, ReconNetwork, forward
from echobeam.autodiff.optim import OptimizerState, adam_step, momentum_decay_step
from echobeam.autodiff.tensor import Tensor, const, param

__all__ = [
    "Architecture", "ReconNetwork", "forward", "OptimizerState", "adam_step",
    "momentum_decay_step", "Tensor", "const", "param",
]
