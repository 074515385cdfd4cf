"""Tensor-train finite elements for 2D plane-stress elasticity on
quadrilateral grids, with a classical sparse FEM reference implementation
and a benchmarking CLI."""

from .tt import (
    TensorTrain,
    TTLinearOperator,
    TruncationPolicy,
    qtt_encode,
    qtt_decode,
    tt_from_dense,
    tt_to_dense,
    tt_round,
    memory_footprint,
)

__version__ = "0.1.0"

__all__ = [
    "TensorTrain",
    "TTLinearOperator",
    "TruncationPolicy",
    "qtt_encode",
    "qtt_decode",
    "tt_from_dense",
    "tt_to_dense",
    "tt_round",
    "memory_footprint",
    "__version__",
]
