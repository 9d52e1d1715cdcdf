"""HTTP service wrapping the core pipeline.

The service is stateless: classifier models, annotations, and frames all
arrive inside the request, so any number of clients and machines can share
one instance.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..detect import BoundingBox
from ..expert import ExpertConfig, correct
from ..forecast import LossConfig, forecast_series
from ..pipeline import PipelineConfig, run_on_frames, run_on_series, track_frames
from ..pipeline import evaluate_records
from ..raster import StructuringElement
from ..segment import Calibration, measure
from ..thresholding import (
    ClassifierModel,
    ThresholdClass,
    ThresholdDecision,
    otsu_decision,
    predict_class,
    train_classifier,
)
from ..detect import propose_boxes, tracks_to_doc
from . import schemas as s


def _decision_model(d: ThresholdDecision) -> s.ThresholdDecisionModel:
    return s.ThresholdDecisionModel(
        threshold=d.threshold, method=d.method, confidence=d.confidence, degenerate=d.degenerate
    )


def _pipeline_config(model: s.ConfigModel) -> PipelineConfig:
    return PipelineConfig(**model.model_dump())


def _annotation_map(rows) -> dict[int, list[tuple[int, BoundingBox]]]:
    frames: dict[int, list[tuple[int, BoundingBox]]] = {}
    for r in rows:
        frames.setdefault(r.frame_index, []).append(
            (r.track_id, BoundingBox(r.x, r.y, r.w, r.h))
        )
    return frames


def create_app() -> FastAPI:
    app = FastAPI(
        title="wearcast",
        version=__version__,
        description="Surface-defect quantification and wear forecasting service",
    )

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=s.HealthResponse)
    def health() -> s.HealthResponse:
        return s.HealthResponse()

    @app.post("/synth/generate", response_model=s.SynthResponse)
    def synth_generate(req: s.SynthRequest) -> s.SynthResponse:
        from ..synth import SynthConfig, generate_sequence

        cfg = SynthConfig(**req.model_dump(exclude={"n_frames"}))
        seq = generate_sequence(cfg, req.n_frames)
        factor = cfg.mm_per_pixel**2
        return s.SynthResponse(
            frames=[s.ImagePayload.from_image(f) for f in seq.frames],
            truth=[
                s.GroundTruthRow(t=t, area_px=px, area_mm2=px * factor)
                for t, px in enumerate(seq.true_areas_px)
            ],
        )

    @app.post("/threshold/otsu", response_model=s.OtsuResponse)
    def threshold_otsu(req: s.OtsuRequest) -> s.OtsuResponse:
        return s.OtsuResponse(decision=_decision_model(otsu_decision(req.image.to_image())))

    @app.post("/threshold/train", response_model=s.TrainResponse)
    def threshold_train(req: s.TrainRequest) -> s.TrainResponse:
        samples = [
            (item.image.to_image(), ThresholdClass.from_value(item.class_value))
            for item in req.samples
        ]
        return s.TrainResponse(model=train_classifier(samples).to_doc())

    @app.post("/threshold/predict", response_model=s.PredictResponse)
    def threshold_predict(req: s.PredictRequest) -> s.PredictResponse:
        model = ClassifierModel.from_doc(req.model)
        return s.PredictResponse(
            decision=_decision_model(predict_class(model, req.image.to_image()))
        )

    @app.post("/segment/measure", response_model=s.MeasureResponse)
    def segment_measure(req: s.MeasureRequest) -> s.MeasureResponse:
        cfg = _pipeline_config(req.config)
        from ..pipeline import _decider

        classifier = (
            ClassifierModel.from_doc(req.classifier_model) if req.classifier_model else None
        )
        decide = _decider(cfg, classifier)
        roi = req.image.to_image()
        decision = decide(roi)
        result = measure(
            roi,
            decision,
            StructuringElement(cfg.se_radius),
            Calibration(cfg.mm_per_pixel),
            cfg.dilate_passes,
            cfg.erode_passes,
        )
        return s.MeasureResponse(
            area_px=result.area_px,
            area_mm2=result.area_mm2,
            decision=_decision_model(decision),
            contour=list(result.contour.points) if result.contour else None,
        )

    @app.post("/detect/propose", response_model=s.ProposeResponse)
    def detect_propose(req: s.ProposeRequest) -> s.ProposeResponse:
        cfg = _pipeline_config(req.config)
        from ..pipeline import _decider

        classifier = (
            ClassifierModel.from_doc(req.classifier_model) if req.classifier_model else None
        )
        img = req.image.to_image()
        decision = _decider(cfg, classifier)(img)
        mode, arg = cfg.detection_mode()
        if mode != "propose":
            raise ValueError("detect/propose requires detection = propose:<min_area>")
        boxes = propose_boxes(
            img,
            decision,
            min_area=arg,
            se=StructuringElement(cfg.se_radius),
            margin=cfg.propose_margin,
            dilate_passes=cfg.dilate_passes,
            erode_passes=cfg.erode_passes,
        )
        return s.ProposeResponse(boxes=[s.BoxModel.from_box(b) for b in boxes])

    @app.post("/track/run", response_model=s.TrackResponse)
    def track_run(req: s.TrackRequest) -> s.TrackResponse:
        cfg = _pipeline_config(req.config)
        frames = [p.to_image() if p is not None else None for p in req.frames]
        annotations = _annotation_map(req.annotations) if req.annotations is not None else None
        classifier = (
            ClassifierModel.from_doc(req.classifier_model) if req.classifier_model else None
        )
        tracks, warnings = track_frames(frames, req.frame_indices, cfg, annotations, classifier)
        return s.TrackResponse(tracks=tracks_to_doc(tracks), warnings=warnings)

    @app.post("/expert/correct", response_model=s.CorrectResponse)
    def expert_correct(req: s.CorrectRequest) -> s.CorrectResponse:
        series = s.series_from_rows(req.series, req.track_id)
        corrected = correct(series, ExpertConfig(growth_ratio_max=req.growth_ratio_max))
        return s.CorrectResponse(corrected=s.rows_from_corrected(corrected))

    @app.post("/forecast/report", response_model=s.ForecastResponse)
    def forecast_report(req: s.ForecastRequest) -> s.ForecastResponse:
        series = s.series_from_rows(req.series)
        horizon = req.loss_horizon if req.loss_horizon > 0 else None
        report = forecast_series(
            series.measurements,
            LossConfig(alpha=req.loss_alpha, horizon=horizon),
            wear_limit=req.wear_limit_mm2,
            band=req.band,
        )
        return s.ForecastResponse(report=report.to_doc())

    @app.post("/pipeline/run", response_model=s.PipelineRunResponse)
    def pipeline_run(req: s.PipelineRunRequest) -> s.PipelineRunResponse:
        cfg = _pipeline_config(req.config)
        if req.mode == "frames":
            if not req.frames or req.frame_indices is None:
                raise ValueError("frames mode needs frames and frame_indices")
            frames = [p.to_image() if p is not None else None for p in req.frames]
            annotations = (
                _annotation_map(req.annotations) if req.annotations is not None else None
            )
            classifier = (
                ClassifierModel.from_doc(req.classifier_model)
                if req.classifier_model
                else None
            )
            result = run_on_frames(frames, req.frame_indices, cfg, annotations, classifier)
        elif req.mode == "areas":
            if not req.series:
                raise ValueError("areas mode needs a series")
            result = run_on_series(s.series_from_rows(req.series, req.track_id), cfg)
        else:
            raise ValueError(f"unknown pipeline mode {req.mode!r}")
        return s.PipelineRunResponse(
            reports=[r.to_doc() for r in result.reports],
            skipped=result.skipped,
            warnings=result.warnings,
            artifacts=result.artifacts,
        )

    @app.post("/evaluate", response_model=s.EvaluateResponse)
    def evaluate(req: s.EvaluateRequest) -> s.EvaluateResponse:
        records = [r.to_record() for r in req.records]
        truth = [(r.t, r.area_px, r.area_mm2) for r in req.truth]
        return s.EvaluateResponse(metrics=evaluate_records(records, truth))

    return app


app = create_app()
