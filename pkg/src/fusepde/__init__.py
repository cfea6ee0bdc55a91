"""fusepde: unified forward surrogate + flow-matching inverse inference for
parametric PDEs, with a self-contained synthetic test problem."""

__version__ = "0.1.0"

from .config import RunConfig
from .data import (
    ChannelMask,
    Dataset,
    FunctionSample,
    NormalizationStats,
    ParameterPrior,
    ParameterVector,
)
from .fmpe import PosteriorEnsemble
from .model import EnsemblePrediction, FuseModel, train
from .synth import SynthProblem, generate_dataset

__all__ = [
    "ChannelMask",
    "Dataset",
    "EnsemblePrediction",
    "FunctionSample",
    "FuseModel",
    "NormalizationStats",
    "ParameterPrior",
    "ParameterVector",
    "PosteriorEnsemble",
    "RunConfig",
    "SynthProblem",
    "generate_dataset",
    "train",
]
