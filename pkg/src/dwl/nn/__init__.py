from .layers import MLP, GaussianHead, GRUCell, Linear, Module, Parameter
from .networks import DWLNetwork, PPOBaseline, build_network
from .optim import Adam
from .tensor import (Tensor, affine, concat, elu, gru_cell, maximum, minimum, no_grad, norm,
                     stack, where)


def param_count(network: Module) -> int:
    return network.param_count()


__all__ = [
    "Adam", "DWLNetwork", "GaussianHead", "GRUCell", "Linear", "MLP", "Module", "PPOBaseline",
    "Parameter", "Tensor", "affine", "build_network", "concat", "elu", "gru_cell", "maximum",
    "minimum", "no_grad", "norm", "param_count", "stack", "where",
]
