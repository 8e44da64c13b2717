"""Temporal knowledge circuits in a toy transformer."""

from ._core import (
    FactBase,
    Model,
    NumericError,
    ParseError,
    Prompt,
    crs,
    extract_circuit,
    find_temporal_heads,
    full_edge_count,
    sha256_hex,
    spearman,
    train,
)

__all__ = [
    "FactBase",
    "Model",
    "NumericError",
    "ParseError",
    "Prompt",
    "crs",
    "extract_circuit",
    "find_temporal_heads",
    "full_edge_count",
    "sha256_hex",
    "spearman",
    "train",
]
