"""Concrete test problems: synthetic problems with exact oracles and small neural networks."""
from __future__ import annotations

from typing import Optional, Union

from ..problem import InvalidArgument, StochasticProblem
from .nets import Dataset, Layout, NetSpec, NeuralProblem, load_idx, nn_loss_grad, synthetic_blobs
from .synthetic import CircleToy, FiniteSupport, QuadraticAffine, SyntheticSpec, make_synthetic


def make_problem(spec: Union[SyntheticSpec, NetSpec], data: Optional[Dataset] = None) -> StochasticProblem:
    if isinstance(spec, SyntheticSpec):
        return make_synthetic(spec)
    if isinstance(spec, NetSpec):
        if data is None:
            raise InvalidArgument("neural network problems need a dataset")
        return NeuralProblem(spec, data)
    raise InvalidArgument(f"unsupported problem spec {type(spec).__name__}")


__all__ = [
    "CircleToy", "Dataset", "FiniteSupport", "Layout", "NetSpec", "NeuralProblem", "QuadraticAffine",
    "SyntheticSpec", "load_idx", "make_problem", "make_synthetic", "nn_loss_grad", "synthetic_blobs",
]
