"""Pydantic request/response models for the HTTP service.

Images travel as base64-encoded row-major bytes so values round-trip exactly;
floats round-trip through JSON via repr and parse back bit-identical.
"""
from __future__ import annotations

import base64
from typing import Optional

from pydantic import BaseModel, Field

from .. import __version__
from ..detect import BoundingBox
from ..expert import AreaSeries, CorrectedSeries, Measurement
from ..raster import GrayImage
from ..segment import AreaRecord


class ImagePayload(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    pixels_b64: str

    @classmethod
    def from_image(cls, img: GrayImage) -> "ImagePayload":
        return cls(
            width=img.width,
            height=img.height,
            pixels_b64=base64.b64encode(img.tobytes()).decode("ascii"),
        )

    def to_image(self) -> GrayImage:
        return GrayImage.from_bytes(self.width, self.height, base64.b64decode(self.pixels_b64))


class ConfigModel(BaseModel):
    """Mirror of the pipeline configuration; same defaults."""

    mm_per_pixel: float = 0.01
    threshold_method: str = "fixed:52"
    se_radius: int = 1
    dilate_passes: int = 1
    erode_passes: int = 1
    growth_ratio_max: float = 1.5
    loss_alpha: int = 7
    loss_horizon: int = 0
    wear_limit_mm2: float = 0.9
    band: float = 0.2
    detection: str = "propose:100"
    fallback_grow: float = 1.2
    propose_margin: int = 2
    iou_floor: float = 0.1
    scan_interval_hours: float = 4.0


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str = __version__


class SynthRequest(BaseModel):
    n_frames: int = Field(ge=1)
    width: int = 190
    height: int = 190
    background: int = 140
    noise_sigma: float = 0.0
    defect_intensity: int = 30
    growth: str = "linear"
    area_start: float = 100.0
    area_rate: float = 20.0
    speckle_rate: float = 0.0
    outlier_prob: float = 0.0
    outlier_magnitude: float = 0.5
    seed: int = 0
    mm_per_pixel: float = 0.01


class GroundTruthRow(BaseModel):
    t: int
    area_px: int
    area_mm2: float


class SynthResponse(BaseModel):
    frames: list[ImagePayload]
    truth: list[GroundTruthRow]


class OtsuRequest(BaseModel):
    image: ImagePayload


class ThresholdDecisionModel(BaseModel):
    threshold: int
    method: str
    confidence: float = 1.0
    degenerate: bool = False


class OtsuResponse(BaseModel):
    decision: ThresholdDecisionModel


class TrainSample(BaseModel):
    image: ImagePayload
    class_value: int


class TrainRequest(BaseModel):
    samples: list[TrainSample]


class TrainResponse(BaseModel):
    model: dict


class PredictRequest(BaseModel):
    model: dict
    image: ImagePayload


class PredictResponse(BaseModel):
    decision: ThresholdDecisionModel


class MeasureRequest(BaseModel):
    image: ImagePayload
    config: ConfigModel = ConfigModel()
    classifier_model: Optional[dict] = None


class MeasureResponse(BaseModel):
    area_px: int
    area_mm2: float
    decision: ThresholdDecisionModel
    contour: Optional[list[tuple[int, int]]] = None


class BoxModel(BaseModel):
    x: int
    y: int
    w: int
    h: int

    @classmethod
    def from_box(cls, box: BoundingBox) -> "BoxModel":
        return cls(x=box.x, y=box.y, w=box.w, h=box.h)

    def to_box(self) -> BoundingBox:
        return BoundingBox(self.x, self.y, self.w, self.h)


class ProposeRequest(BaseModel):
    image: ImagePayload
    config: ConfigModel = ConfigModel()
    classifier_model: Optional[dict] = None


class ProposeResponse(BaseModel):
    boxes: list[BoxModel]


class AnnotationRow(BaseModel):
    frame_index: int
    track_id: int
    x: int
    y: int
    w: int
    h: int


class TrackRequest(BaseModel):
    frames: list[Optional[ImagePayload]]
    frame_indices: list[int]
    config: ConfigModel = ConfigModel()
    annotations: Optional[list[AnnotationRow]] = None
    classifier_model: Optional[dict] = None


class TrackResponse(BaseModel):
    tracks: list[dict]
    warnings: list[str]


class SeriesRow(BaseModel):
    t: int
    area_mm2: float


class CorrectedRow(BaseModel):
    t: int
    area_mm2: float
    case: str


class CorrectRequest(BaseModel):
    series: list[SeriesRow]
    growth_ratio_max: float = 1.5
    track_id: int = 0


class CorrectResponse(BaseModel):
    corrected: list[CorrectedRow]


class ForecastRequest(BaseModel):
    series: list[SeriesRow]  # already corrected; use /pipeline/run for raw series
    loss_alpha: int = 7
    loss_horizon: int = 0
    wear_limit_mm2: float = 0.9
    band: float = 0.2


class ForecastResponse(BaseModel):
    report: dict


class PipelineRunRequest(BaseModel):
    mode: str  # "frames" | "areas"
    config: ConfigModel = ConfigModel()
    frames: Optional[list[Optional[ImagePayload]]] = None
    frame_indices: Optional[list[int]] = None
    annotations: Optional[list[AnnotationRow]] = None
    series: Optional[list[SeriesRow]] = None
    classifier_model: Optional[dict] = None
    track_id: int = 0


class PipelineRunResponse(BaseModel):
    reports: list[dict]
    skipped: list[dict]
    warnings: list[str]
    artifacts: dict[str, str]


class AreaRecordModel(BaseModel):
    frame_index: int
    timestep: int
    area_px: int
    area_mm2: float
    threshold: int
    method: str

    def to_record(self) -> AreaRecord:
        return AreaRecord(
            frame_index=self.frame_index,
            timestep=self.timestep,
            area_px=self.area_px,
            area_mm2=self.area_mm2,
            threshold=self.threshold,
            method=self.method,
        )


class EvaluateRequest(BaseModel):
    records: list[AreaRecordModel]
    truth: list[GroundTruthRow]


class EvaluateResponse(BaseModel):
    metrics: dict


def series_from_rows(rows: list[SeriesRow], track_id: int = 0) -> AreaSeries:
    return AreaSeries(track_id, tuple(Measurement(r.t, r.area_mm2) for r in rows))


def rows_from_corrected(corrected: CorrectedSeries) -> list[CorrectedRow]:
    return [
        CorrectedRow(t=m.t, area_mm2=m.area, case=c)
        for m, c in zip(corrected.measurements, corrected.cases)
    ]
