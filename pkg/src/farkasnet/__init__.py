"""Farkas layers: ReLU layers with at least one neuron active for every input."""

from .exceptions import (ConstructionError, DatasetError, DimensionError, FarkasError,
                         FormatError, InputError, SpecError, UsageError)
from .farkas import FarkasDenseLayer, FarkasResidualBlock, aggregate_bias, aggregate_rows
from .lp import LpProblem, check_certificate, dual_value, min_max_margin
from .netbuild import InitScheme, Network, NetworkSpec, build, is_born_dead, mlp_spec
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConstructionError", "DatasetError", "DimensionError", "FarkasError", "FormatError",
    "InputError", "SpecError", "UsageError", "FarkasDenseLayer", "FarkasResidualBlock",
    "aggregate_bias", "aggregate_rows", "LpProblem", "check_certificate", "dual_value",
    "min_max_margin", "InitScheme", "Network", "NetworkSpec", "build", "is_born_dead",
    "mlp_spec", "Tensor", "no_grad", "FarkasMLPClassifier",
]


def __getattr__(name):
    # sklearn import is deferred so the core stays light
    if name == "FarkasMLPClassifier":
        from .estimator import FarkasMLPClassifier
        return FarkasMLPClassifier
    raise AttributeError(name)
