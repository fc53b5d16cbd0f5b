"""GO gradients: one-sample gradient estimators for expectations over continuous and discrete variables."""
from .distributions import FAMILIES, Distribution, DomainError
from .estimators import (
    GradientEstimate,
    IntegrandSpec,
    elbo_gradient_sticking,
    go_gradient,
    go_gradient_finite_support,
    gradient_variance,
    reinforce_gradient,
    rep_gradient,
)
from .statgraph import StochasticGraph, StochasticNode, deep_go_gradient, forward_sample, statistical_backprop

__version__ = "0.1.0"

__all__ = [
    "FAMILIES",
    "Distribution",
    "DomainError",
    "GradientEstimate",
    "IntegrandSpec",
    "StochasticGraph",
    "StochasticNode",
    "deep_go_gradient",
    "elbo_gradient_sticking",
    "forward_sample",
    "go_gradient",
    "go_gradient_finite_support",
    "gradient_variance",
    "reinforce_gradient",
    "rep_gradient",
    "statistical_backprop",
]
