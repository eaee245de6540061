"""Exact-scale laboratory for restricted Boltzmann machines on binary variables."""

from .model import ProbabilityTensor, RbmParams, joint_distribution, visible_marginal
from .sampling import ChainState, TransitionKernel, make_rng
from .statespace import CoefficientVector, StateSpace

__all__ = [
    "ChainState",
    "CoefficientVector",
    "ProbabilityTensor",
    "RbmParams",
    "StateSpace",
    "TransitionKernel",
    "joint_distribution",
    "make_rng",
    "visible_marginal",
]

__version__ = "0.1.0"
