"""Volatility forecasting: GARCH(1,1), range-based estimators and a multimodal
price-and-news neural network built on a small reverse-mode autodiff engine."""

from .garch import GarchFit, GarchParams
from .marketdata import DailyVolProxy, OhlcBar, PriceSeries
from .metrics import EvalReport
from .model import ModelConfig, VolatilityNet
from .pipeline import Sample, SampleSet, SplitSpec, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "DailyVolProxy", "EvalReport", "GarchFit", "GarchParams", "ModelConfig", "OhlcBar", "PriceSeries",
    "Sample", "SampleSet", "SplitSpec", "TrainConfig", "VolatilityNet",
]
