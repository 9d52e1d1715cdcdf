"""End-to-end orchestration: detect, quantify, correct, forecast.

Two ingestion modes share the back half of the chain: a frame sequence runs
detection and segmentation first, while a pre-measured area series (expert
labeled sizes) skips straight to correction and forecasting. All artifacts
are returned as deterministic text payloads keyed by filename, so callers
decide where (and whether) files land on disk.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

from .detect import BoundingBox, DefectTrack, SequenceTracker, propose_boxes, tracks_to_doc
from .expert import AreaSeries, CorrectedSeries, ExpertConfig, Measurement, correct, write_series_csv
from .forecast import (
    ForecastReport,
    InsufficientDataError,
    LossConfig,
    forecast_series,
    write_loss_csv,
)
from .raster import GrayImage, StructuringElement
from .segment import AreaRecord, Calibration, measure, write_area_csv
from .thresholding import (
    THRESHOLD_VALUES,
    ClassifierModel,
    fixed_decision,
    otsu_decision,
    predict_class,
)

MIN_FORECAST_POINTS = 5
INSUFFICIENT_MSG = (
    f"forecasting needs at least {MIN_FORECAST_POINTS} corrected points"
)


@dataclass
class PipelineConfig:
    """Every stage parameter in one flat, serializable bundle."""

    mm_per_pixel: float = 0.01
    threshold_method: str = "fixed:52"  # fixed:<value> | otsu | classifier:<model path>
    se_radius: int = 1
    dilate_passes: int = 1
    erode_passes: int = 1
    growth_ratio_max: float = 1.5
    loss_alpha: int = 7
    loss_horizon: int = 0  # 0 evaluates every remaining point
    wear_limit_mm2: float = 0.9
    band: float = 0.2
    detection: str = "propose:100"  # propose:<min_area px^2> | annotations:<csv path>
    fallback_grow: float = 1.2
    propose_margin: int = 2
    iou_floor: float = 0.1
    scan_interval_hours: float = 4.0

    def __post_init__(self):
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")
        if self.se_radius < 0 or self.dilate_passes < 0 or self.erode_passes < 0:
            raise ValueError("morphology parameters must be >= 0")
        if not self.growth_ratio_max > 1.0:
            raise ValueError("growth_ratio_max must be > 1")
        if self.loss_alpha < 1 or self.loss_alpha % 2 == 0:
            raise ValueError("loss_alpha must be an odd positive integer")
        if self.loss_horizon < 0:
            raise ValueError("loss_horizon must be >= 0 (0 = unbounded)")
        if self.wear_limit_mm2 <= 0:
            raise ValueError("wear_limit_mm2 must be positive")
        if not 0 <= self.band < 1:
            raise ValueError("band must lie in [0, 1)")
        if self.fallback_grow < 1.0:
            raise ValueError("fallback_grow must be >= 1")
        if self.propose_margin < 0:
            raise ValueError("propose_margin must be >= 0")
        if not 0 <= self.iou_floor <= 1:
            raise ValueError("iou_floor must lie in [0, 1]")
        if self.scan_interval_hours <= 0:
            raise ValueError("scan_interval_hours must be positive")
        self.threshold_mode()
        self.detection_mode()

    def threshold_mode(self) -> tuple[str, Optional[object]]:
        method = self.threshold_method
        if method == "otsu":
            return "otsu", None
        if method.startswith("fixed:"):
            value = int(method.split(":", 1)[1])
            if value not in THRESHOLD_VALUES:
                raise ValueError(f"fixed threshold must be one of {THRESHOLD_VALUES}")
            return "fixed", value
        if method.startswith("classifier:"):
            path = method.split(":", 1)[1]
            if not path:
                raise ValueError("classifier method needs a model path")
            return "classifier", path
        raise ValueError(f"unknown threshold_method {method!r}")

    def detection_mode(self) -> tuple[str, object]:
        source = self.detection
        if source.startswith("propose:"):
            min_area = int(source.split(":", 1)[1])
            if min_area <= 0:
                raise ValueError("propose min_area must be positive")
            return "propose", min_area
        if source.startswith("annotations:"):
            path = source.split(":", 1)[1]
            if not path:
                raise ValueError("annotations method needs a CSV path")
            return "annotations", path
        raise ValueError(f"unknown detection {source!r}")

    def loss_config(self) -> LossConfig:
        horizon = self.loss_horizon if self.loss_horizon > 0 else None
        return LossConfig(alpha=self.loss_alpha, horizon=horizon)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            ftype = known[key].type
            if ftype in ("float", float):
                values[key] = float(value)
            elif ftype in ("int", int):
                values[key] = int(value)
            else:
                values[key] = value
        return cls(**values)


@dataclass
class PipelineResult:
    reports: list[ForecastReport]
    corrected: dict[int, CorrectedSeries]
    raw_series: dict[int, AreaSeries]
    records: dict[int, list[AreaRecord]]
    tracks: Optional[list[DefectTrack]]
    skipped: list[dict]
    warnings: list[str]
    artifacts: dict[str, str]


def _decider(cfg: PipelineConfig, classifier: Optional[ClassifierModel]):
    mode, arg = cfg.threshold_mode()
    if mode == "fixed":
        decision = fixed_decision(arg)
        return lambda img: decision
    if mode == "otsu":
        return otsu_decision
    if classifier is None:
        raise ValueError("threshold_method is classifier:<path> but no model was provided")
    return lambda img: predict_class(classifier, img)


def track_frames(
    frames: list[Optional[GrayImage]],
    frame_indices: list[int],
    cfg: PipelineConfig,
    annotations: Optional[dict[int, list[tuple[int, BoundingBox]]]] = None,
    classifier: Optional[ClassifierModel] = None,
) -> tuple[list[DefectTrack], list[str]]:
    """Detection/tracking stage over an ordered frame sequence.

    ``frames[i]`` may be None for an unreadable frame: it is warned about and
    the temporal fallback keeps every started track populated at that t.
    """
    if not frames:
        raise ValueError("no frames to process")
    if len(frames) != len(frame_indices):
        raise ValueError("one frame index per frame required")
    if any(b <= a for a, b in zip(frame_indices, frame_indices[1:])):
        raise ValueError("frame indices must be strictly increasing")
    sizes = {(f.width, f.height) for f in frames if f is not None}
    if len(sizes) > 1:
        raise ValueError(f"frames disagree on size: {sorted(sizes)}")
    if not sizes:
        raise ValueError("every frame is unreadable")
    frame_w, frame_h = next(iter(sizes))

    decide = _decider(cfg, classifier)
    se = StructuringElement(cfg.se_radius)
    det_mode, det_arg = cfg.detection_mode()
    if det_mode == "annotations" and annotations is None:
        raise ValueError("detection is annotations:<path> but no annotation rows were provided")
    warnings: list[str] = []

    tracker = SequenceTracker(
        frame_size=(frame_w, frame_h), iou_floor=cfg.iou_floor, grow=cfg.fallback_grow
    )
    for t, frame in zip(frame_indices, frames):
        if frame is None:
            warnings.append(f"frame {t}: unreadable, using fallback boxes")
            if annotations is not None:
                tracker.step_annotated(t, [])
            else:
                tracker.step_proposed(t, [])
            continue
        if annotations is not None:
            tracker.step_annotated(t, annotations.get(t, []))
        else:
            decision = decide(frame)
            boxes = propose_boxes(
                frame,
                decision,
                min_area=det_arg,
                se=se,
                margin=cfg.propose_margin,
                dilate_passes=cfg.dilate_passes,
                erode_passes=cfg.erode_passes,
            )
            tracker.step_proposed(t, boxes)
    return tracker.tracks, warnings


def run_on_frames(
    frames: list[Optional[GrayImage]],
    frame_indices: list[int],
    cfg: PipelineConfig,
    annotations: Optional[dict[int, list[tuple[int, BoundingBox]]]] = None,
    classifier: Optional[ClassifierModel] = None,
) -> PipelineResult:
    """Frame-sequence mode: detect/track, measure per ROI, correct, forecast."""
    tracks, warnings = track_frames(frames, frame_indices, cfg, annotations, classifier)
    decide = _decider(cfg, classifier)
    se = StructuringElement(cfg.se_radius)
    cal = Calibration(cfg.mm_per_pixel)
    by_index: dict[int, Optional[GrayImage]] = dict(zip(frame_indices, frames))

    records: dict[int, list[AreaRecord]] = {}
    raw_series: dict[int, AreaSeries] = {}
    for track in tracks:
        rows: list[AreaRecord] = []
        for entry in track.entries:
            frame = by_index.get(entry.t)
            if frame is None:
                continue
            roi = frame.crop(entry.box.x, entry.box.y, entry.box.w, entry.box.h)
            decision = decide(roi)
            result = measure(roi, decision, se, cal, cfg.dilate_passes, cfg.erode_passes)
            rows.append(
                AreaRecord(
                    frame_index=entry.t,
                    timestep=entry.t,
                    area_px=result.area_px,
                    area_mm2=result.area_mm2,
                    threshold=decision.threshold,
                    method=decision.method,
                )
            )
        if rows:
            records[track.track_id] = rows
            raw_series[track.track_id] = AreaSeries(
                track.track_id,
                tuple(Measurement(r.timestep, r.area_mm2) for r in rows),
            )

    result = _correct_and_forecast(raw_series, cfg, warnings)
    result.records = records
    result.tracks = tracks
    result.artifacts = assemble_artifacts(result, cfg)
    return result


def run_on_series(series: AreaSeries, cfg: PipelineConfig) -> PipelineResult:
    """Pre-measured mode: correction and forecasting only."""
    result = _correct_and_forecast({series.track_id: series}, cfg, warnings=[])
    result.artifacts = assemble_artifacts(result, cfg)
    return result


def _correct_and_forecast(
    raw_series: dict[int, AreaSeries], cfg: PipelineConfig, warnings: list[str]
) -> PipelineResult:
    if not raw_series:
        raise ValueError("no defect tracks were found to forecast")
    expert_cfg = ExpertConfig(growth_ratio_max=cfg.growth_ratio_max)
    loss_cfg = cfg.loss_config()
    corrected: dict[int, CorrectedSeries] = {}
    reports: list[ForecastReport] = []
    skipped: list[dict] = []
    for tid in sorted(raw_series):
        cseries = correct(raw_series[tid], expert_cfg)
        corrected[tid] = cseries
        if len(cseries) < MIN_FORECAST_POINTS:
            skipped.append(
                {"track_id": tid, "reason": f"{INSUFFICIENT_MSG}; track has {len(cseries)}"}
            )
            continue
        try:
            report = forecast_series(
                cseries.measurements,
                loss_cfg,
                wear_limit=cfg.wear_limit_mm2,
                band=cfg.band,
            )
        except InsufficientDataError as exc:
            skipped.append({"track_id": tid, "reason": str(exc)})
            continue
        reports.append(
            replace(
                report,
                metadata={
                    "track_id": tid,
                    "scan_interval_hours": cfg.scan_interval_hours,
                },
            )
        )
    if not reports:
        detail = "; ".join(s["reason"] for s in skipped) or "no measurable tracks"
        raise InsufficientDataError(f"{INSUFFICIENT_MSG} on at least one track ({detail})")
    return PipelineResult(
        reports=reports,
        corrected=corrected,
        raw_series=raw_series,
        records={},
        tracks=None,
        skipped=skipped,
        warnings=warnings,
        artifacts={},
    )


def emit_plot_data(report: ForecastReport, corrected: CorrectedSeries) -> dict[str, str]:
    """Plot-ready text artifacts for one track; deterministic for equal inputs."""
    out: dict[str, str] = {}

    buf = io.StringIO()
    buf.write("t,area_mm2,case,fitted_mm2\n")
    for m, case in zip(corrected.measurements, corrected.cases):
        buf.write(f"{m.t},{m.area!r},{case},{report.full_fit.predict(m.t)!r}\n")
    out["progression.csv"] = buf.getvalue()

    buf = io.StringIO()
    write_loss_csv(report, buf)
    out["losses.csv"] = buf.getvalue()

    ts, fitted = _forecast_samples(report, corrected)
    limit = report.wear_limit
    band = report.band if report.band is not None else 0.0
    buf = io.StringIO()
    buf.write("t,fitted_mm2,limit_mm2,limit_low_mm2,limit_high_mm2\n")
    for t, y in zip(ts, fitted):
        if limit is None:
            buf.write(f"{t!r},{y!r},,,\n")
        else:
            lo = limit * (1 - band)
            hi = limit * (1 + band)
            buf.write(f"{t!r},{y!r},{limit!r},{lo!r},{hi!r}\n")
    out["forecast.csv"] = buf.getvalue()

    out["forecast.svg"] = render_forecast_svg(report, corrected)
    return out


def _forecast_samples(
    report: ForecastReport, corrected: CorrectedSeries, n: int = 121
) -> tuple[list[float], list[float]]:
    t0 = corrected.measurements[0].t
    t_last = corrected.measurements[-1].t
    candidates = [float(t_last)]
    for value in (report.t_low, report.t_star, report.t_high):
        if value is not None:
            candidates.append(value)
    t_end = max(candidates)
    t_end = t_end + max(0.1 * (t_end - t0), 2.0)
    ts = [float(v) for v in np.linspace(t0, t_end, n)]
    fitted = [float(report.full_fit.predict(t)) for t in ts]
    return ts, fitted


def render_forecast_svg(report: ForecastReport, corrected: CorrectedSeries) -> str:
    """Self-contained SVG: corrected points, fitted curve, limit band, crossings."""
    width, height = 720, 440
    ml, mr, mt, mb = 70, 20, 20, 50
    plot_w = width - ml - mr
    plot_h = height - mt - mb

    ts, fitted = _forecast_samples(report, corrected)
    areas = [m.area for m in corrected.measurements]
    limit = report.wear_limit
    band = report.band if report.band is not None else 0.0
    y_top = max(areas) if areas else 1.0
    if limit is not None:
        y_top = max(y_top, limit * (1 + band))
    y_top *= 1.15
    if y_top <= 0:
        y_top = 1.0
    x0, x1 = ts[0], ts[-1]

    def sx(t: float) -> float:
        return ml + (t - x0) / (x1 - x0) * plot_w

    def sy(v: float) -> float:
        return mt + (1 - v / y_top) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" y2="{mt + plot_h}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black" stroke-width="1"/>',
    ]
    for i in range(6):
        tv = x0 + (x1 - x0) * i / 5
        xv = sx(tv)
        parts.append(
            f'<line x1="{xv:.2f}" y1="{mt + plot_h}" x2="{xv:.2f}" y2="{mt + plot_h + 5}" '
            'stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{xv:.2f}" y="{mt + plot_h + 20}" font-size="11" '
            f'text-anchor="middle">{tv:.1f}</text>'
        )
        vv = y_top * i / 5
        yv = sy(vv)
        parts.append(
            f'<line x1="{ml - 5}" y1="{yv:.2f}" x2="{ml}" y2="{yv:.2f}" '
            'stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{yv + 4:.2f}" font-size="11" '
            f'text-anchor="end">{vv:.3g}</text>'
        )
    parts.append(
        f'<text x="{ml + plot_w / 2:.2f}" y="{height - 12}" font-size="12" '
        'text-anchor="middle">timestep</text>'
    )
    parts.append(
        f'<text x="16" y="{mt + plot_h / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + plot_h / 2:.2f})">defect area (mm2)</text>'
    )

    if limit is not None:
        for level, dash, label in (
            (limit * (1 - band), "4 3", "limit-"),
            (limit, "1 0", "limit"),
            (limit * (1 + band), "4 3", "limit+"),
        ):
            if level > y_top:
                continue
            yv = sy(level)
            parts.append(
                f'<line x1="{ml}" y1="{yv:.2f}" x2="{ml + plot_w}" y2="{yv:.2f}" '
                f'stroke="#b22222" stroke-width="1" stroke-dasharray="{dash}"/>'
            )
            parts.append(
                f'<text x="{ml + plot_w - 4}" y="{yv - 4:.2f}" font-size="10" fill="#b22222" '
                f'text-anchor="end">{label}</text>'
            )

    # fitted curve, split wherever it leaves the plotted range
    chunk: list[str] = []
    chunks: list[list[str]] = []
    for t, v in zip(ts, fitted):
        if 0 <= v <= y_top:
            chunk.append(f"{sx(t):.2f},{sy(v):.2f}")
        elif chunk:
            chunks.append(chunk)
            chunk = []
    if chunk:
        chunks.append(chunk)
    for chunk in chunks:
        if len(chunk) >= 2:
            parts.append(
                f'<polyline points="{" ".join(chunk)}" fill="none" '
                'stroke="#6a3d9a" stroke-width="1.5"/>'
            )

    for m in corrected.measurements:
        parts.append(
            f'<circle cx="{sx(m.t):.2f}" cy="{sy(m.area):.2f}" r="3" fill="#2e8b57"/>'
        )

    for value, label in ((report.t_low, "t-"), (report.t_star, "t*"), (report.t_high, "t+")):
        if value is None or not x0 <= value <= x1:
            continue
        xv = sx(value)
        parts.append(
            f'<line x1="{xv:.2f}" y1="{mt}" x2="{xv:.2f}" y2="{mt + plot_h}" '
            'stroke="#1f78b4" stroke-width="1" stroke-dasharray="2 2"/>'
        )
        parts.append(
            f'<text x="{xv + 3:.2f}" y="{mt + 12}" font-size="10" fill="#1f78b4">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def assemble_artifacts(result: PipelineResult, cfg: PipelineConfig) -> dict[str, str]:
    artifacts: dict[str, str] = {}
    for tid, rows in sorted(result.records.items()):
        buf = io.StringIO()
        write_area_csv(rows, buf)
        artifacts[f"areas_track{tid}.csv"] = buf.getvalue()
    for tid, cseries in sorted(result.corrected.items()):
        buf = io.StringIO()
        write_series_csv(cseries, buf)
        artifacts[f"corrected_track{tid}.csv"] = buf.getvalue()
    for report in result.reports:
        tid = report.metadata["track_id"] if report.metadata else 0
        for name, content in emit_plot_data(report, result.corrected[tid]).items():
            stem, _, ext = name.partition(".")
            artifacts[f"{stem}_track{tid}.{ext}"] = content
    artifacts["report.json"] = (
        json.dumps([r.to_doc() for r in result.reports], indent=2) + "\n"
    )
    if result.tracks is not None:
        artifacts["tracks.json"] = json.dumps(tracks_to_doc(result.tracks), indent=2) + "\n"
    return artifacts


def evaluate_records(
    records: list[AreaRecord], truth: list[tuple[int, int, float]]
) -> dict:
    """Compare measured areas against ground truth rows (t, area_px, area_mm2)."""
    truth_by_t = {t: px for t, px, _ in truth}
    errors = []
    for r in records:
        if r.timestep not in truth_by_t or truth_by_t[r.timestep] <= 0:
            continue
        true_px = truth_by_t[r.timestep]
        errors.append(abs(r.area_px - true_px) / true_px)
    if not errors:
        return {"n_compared": 0}
    arr = np.array(errors)
    return {
        "n_compared": len(errors),
        "mean_rel_error": float(arr.mean()),
        "max_rel_error": float(arr.max()),
        "frac_within_5pct": float((arr <= 0.05).mean()),
        "frac_within_10pct": float((arr <= 0.10).mean()),
    }
