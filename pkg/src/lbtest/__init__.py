"""Black-box test prioritization for neural classifiers.

A behavioral model is learned from the label-only outputs of the model under
test, mutated, and used to rank adversarial inputs with a sequential
probability ratio test. White-box and confidence-based rankers are included
for comparison.
"""
from . import attacks, baselines, datasets, metrics, mutation, nn, sprt, surrogate
from ._kernels import backend

__version__ = "0.1.0"

__all__ = ["attacks", "baselines", "datasets", "metrics", "mutation", "nn", "sprt", "surrogate",
           "backend", "__version__"]
