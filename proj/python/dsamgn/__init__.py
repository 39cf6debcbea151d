"""Python bindings for the DSAM-GN core library."""

from ._dsamgn import (
    ConfigError,
    Dataset,
    DimensionError,
    IoError,
    Model,
    NumericError,
    SampleSet,
    erase,
    evaluate,
    evaluate_retrieval,
    generate_dataset,
    percentile_rank,
    train,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "DimensionError",
    "IoError",
    "Model",
    "NumericError",
    "SampleSet",
    "erase",
    "evaluate",
    "evaluate_retrieval",
    "generate_dataset",
    "percentile_rank",
    "train",
]
