"""Quantization, bit-flip sensitivity pruning and direct-logic RTL generation for echo state networks."""

from .data import TimeSeriesDataset, gen_henon, gen_synthetic_classification, load_csv, normalize
from .dse import DseResult, explore, filter_configs, report
from .quant import QuantizedModel, build_thresholds, quantize_model, quantized_forward
from .reservoir import Hyperparams, ReservoirModel, evaluate, fit, init_reservoir
from .sensitivity import SensitivityReport, prune, rank_weights, sensitivity_scores

__version__ = "0.1.0"

__all__ = [
    "TimeSeriesDataset", "gen_henon", "gen_synthetic_classification", "load_csv", "normalize",
    "DseResult", "explore", "filter_configs", "report",
    "QuantizedModel", "build_thresholds", "quantize_model", "quantized_forward",
    "Hyperparams", "ReservoirModel", "evaluate", "fit", "init_reservoir",
    "SensitivityReport", "prune", "rank_weights", "sensitivity_scores",
]
