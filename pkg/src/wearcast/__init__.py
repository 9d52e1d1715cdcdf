"""Vision-based wear quantification and growth forecasting for surface defects."""

__version__ = "0.1.0"

from .expert import AreaSeries, CorrectedSeries, ExpertConfig, Measurement, correct
from .forecast import (
    CANDIDATE_KINDS,
    FitResult,
    ForecastReport,
    LossConfig,
    aggregate_loss,
    fit,
    forecast_series,
    predict_crossing,
    select_model,
    weighted_error,
)
from .pipeline import PipelineConfig, run_on_frames, run_on_series
from .raster import BinaryImage, GrayImage, StructuringElement
from .segment import AreaResult, Calibration, measure
from .synth import SynthConfig, generate_sequence
from .thresholding import (
    THRESHOLD_VALUES,
    ClassifierModel,
    ThresholdClass,
    ThresholdDecision,
    otsu_threshold,
    predict_class,
    train_classifier,
)

__all__ = [
    "AreaResult",
    "AreaSeries",
    "BinaryImage",
    "CANDIDATE_KINDS",
    "Calibration",
    "ClassifierModel",
    "CorrectedSeries",
    "ExpertConfig",
    "FitResult",
    "ForecastReport",
    "GrayImage",
    "LossConfig",
    "Measurement",
    "PipelineConfig",
    "StructuringElement",
    "SynthConfig",
    "THRESHOLD_VALUES",
    "ThresholdClass",
    "ThresholdDecision",
    "aggregate_loss",
    "correct",
    "fit",
    "forecast_series",
    "generate_sequence",
    "measure",
    "otsu_threshold",
    "predict_class",
    "predict_crossing",
    "run_on_frames",
    "run_on_series",
    "select_model",
    "train_classifier",
    "weighted_error",
]
