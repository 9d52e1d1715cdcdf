"""Command-line interface.

Each subcommand handles local file I/O and delegates computation to the
service through the client layer: in-process by default, or a remote
instance via --server.
"""
from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional

from .client import ServiceError, make_client
from .detect import read_annotations
from .expert import read_series_csv
from .pipeline import PipelineConfig
from .raster import GrayImage, read_pgm, write_pgm
from .segment import read_area_csv, write_area_csv, AreaRecord
from .service import schemas as s
from .synth import read_ground_truth
from .thresholding import load_manifest

_FRAME_INDEX_RE = re.compile(r"(\d+)$")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline configuration overrides")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        ftype = {"float": float, "int": int, "str": str}[
            f.type if isinstance(f.type, str) else f.type.__name__
        ]
        group.add_argument(flag, type=ftype, default=None, dest=f.name)


def _resolve_config(args) -> s.ConfigModel:
    if args.config:
        cfg = PipelineConfig.from_text(Path(args.config).read_text())
    else:
        cfg = PipelineConfig()
    values = {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}
    for name in values:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    PipelineConfig(**values)  # validate the merged result
    return s.ConfigModel(**values)


def _read_frames(directory: Path) -> tuple[list[Optional[GrayImage]], list[int], list[str]]:
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        raise ValueError(f"no .pgm frames found in {directory}")
    frames: list[Optional[GrayImage]] = []
    indices: list[int] = []
    warnings: list[str] = []
    for pos, path in enumerate(paths):
        match = _FRAME_INDEX_RE.search(path.stem)
        index = int(match.group(1)) if match else pos
        try:
            frames.append(read_pgm(path))
        except (ValueError, OSError) as exc:
            warnings.append(f"warning: unreadable frame {path.name}: {exc}")
            frames.append(None)
        indices.append(index)
    if len(set(indices)) != len(indices):
        raise ValueError("frame filenames produce duplicate frame indices")
    order = sorted(range(len(indices)), key=lambda i: indices[i])
    return [frames[i] for i in order], [indices[i] for i in order], warnings


def _annotation_rows(path: str) -> list[s.AnnotationRow]:
    rows = []
    for frame_index, labeled in sorted(read_annotations(path).items()):
        for track_id, box in labeled:
            rows.append(
                s.AnnotationRow(
                    frame_index=frame_index, track_id=track_id, x=box.x, y=box.y, w=box.w, h=box.h
                )
            )
    return rows


def _load_run_inputs(config: s.ConfigModel, args):
    """Annotations and classifier model referenced by the config, read locally."""
    annotations = None
    classifier_doc = None
    pc = PipelineConfig(**config.model_dump())
    det_mode, det_arg = pc.detection_mode()
    if det_mode == "annotations":
        annotations = _annotation_rows(det_arg)
    thr_mode, thr_arg = pc.threshold_mode()
    if thr_mode == "classifier":
        classifier_doc = json.loads(Path(thr_arg).read_text())
    return annotations, classifier_doc


def _write_artifacts(artifacts: dict[str, str], outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(artifacts.items()):
        (outdir / name).write_text(content)


def _print_report_summary(reports: list[dict], config: s.ConfigModel) -> None:
    for doc in reports:
        track = doc.get("track_id", 0)
        print(f"track {track}: selected model = {doc['selected']}")
        for kind, loss in doc["losses"].items():
            print(f"  loss[{kind}] = {loss:.6g}")
        for kind, reason in doc.get("failures", {}).items():
            print(f"  loss[{kind}] = failed ({reason})")
        t_star = doc.get("t_star")
        if t_star is None:
            print(f"  wear limit {doc['wear_limit_mm2']} mm2 not reached in the search window")
        else:
            hours = t_star * config.scan_interval_hours
            print(
                f"  wear limit {doc['wear_limit_mm2']} mm2 crossed at t* = {t_star:.3f} scans"
                f" (~{hours:.1f} h at {config.scan_interval_hours} h/scan)"
            )
            print(
                f"  band crossings: t_low = {_fmt(doc.get('t_low'))},"
                f" t_high = {_fmt(doc.get('t_high'))}"
            )


def _fmt(value) -> str:
    return "none" if value is None else f"{value:.3f}"


def cmd_synth(args) -> int:
    req = s.SynthRequest(
        n_frames=args.frames,
        width=args.width,
        height=args.height,
        background=args.background,
        noise_sigma=args.noise_sigma,
        defect_intensity=args.defect_intensity,
        growth=args.growth,
        area_start=args.area_start,
        area_rate=args.area_rate,
        speckle_rate=args.speckle_rate,
        outlier_prob=args.outlier_prob,
        outlier_magnitude=args.outlier_magnitude,
        seed=args.seed,
        mm_per_pixel=args.mm_per_pixel if args.mm_per_pixel is not None else 0.01,
    )
    with make_client(args.server) as client:
        resp = client.synth(req)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for k, payload in enumerate(resp.frames):
        write_pgm(payload.to_image(), outdir / f"frame_{k:04d}.pgm")
    with (outdir / "ground_truth.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "area_px", "area_mm2"])
        for row in resp.truth:
            writer.writerow([row.t, row.area_px, repr(row.area_mm2)])
    print(f"wrote {len(resp.frames)} frames and ground_truth.csv to {outdir}")
    return 0


def cmd_segment(args) -> int:
    config = _resolve_config(args)
    frames, indices, warnings = _read_frames(Path(args.frames))
    for w in warnings:
        print(w, file=sys.stderr)
    _, classifier_doc = _load_run_inputs(config, args)
    records = []
    with make_client(args.server) as client:
        for frame, index in zip(frames, indices):
            if frame is None:
                continue
            resp = client.measure(
                s.MeasureRequest(
                    image=s.ImagePayload.from_image(frame),
                    config=config,
                    classifier_model=classifier_doc,
                )
            )
            records.append(
                AreaRecord(
                    frame_index=index,
                    timestep=index,
                    area_px=resp.area_px,
                    area_mm2=resp.area_mm2,
                    threshold=resp.decision.threshold,
                    method=resp.decision.method,
                )
            )
    write_area_csv(records, args.out)
    print(f"measured {len(records)} frames -> {args.out}")
    return 0


def cmd_track(args) -> int:
    config = _resolve_config(args)
    frames, indices, warnings = _read_frames(Path(args.frames))
    for w in warnings:
        print(w, file=sys.stderr)
    annotations, classifier_doc = _load_run_inputs(config, args)
    req = s.TrackRequest(
        frames=[s.ImagePayload.from_image(f) if f is not None else None for f in frames],
        frame_indices=indices,
        config=config,
        annotations=annotations,
        classifier_model=classifier_doc,
    )
    with make_client(args.server) as client:
        resp = client.track(req)
    for w in resp.warnings:
        print(f"warning: {w}", file=sys.stderr)
    Path(args.out).write_text(json.dumps(resp.tracks, indent=2) + "\n")
    print(f"tracked {len(resp.tracks)} defect(s) -> {args.out}")
    return 0


def cmd_forecast(args) -> int:
    config = _resolve_config(args)
    series = read_series_csv(args.input)
    req = s.PipelineRunRequest(
        mode="areas",
        config=config,
        series=[s.SeriesRow(t=m.t, area_mm2=m.area) for m in series.measurements],
        track_id=series.track_id,
    )
    with make_client(args.server) as client:
        resp = client.run_pipeline(req)
    _write_artifacts(resp.artifacts, Path(args.out))
    _print_report_summary(resp.reports, config)
    print(f"artifacts -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = _resolve_config(args)
    source = Path(args.input)
    with make_client(args.server) as client:
        if source.is_dir():
            frames, indices, warnings = _read_frames(source)
            for w in warnings:
                print(w, file=sys.stderr)
            annotations, classifier_doc = _load_run_inputs(config, args)
            req = s.PipelineRunRequest(
                mode="frames",
                config=config,
                frames=[
                    s.ImagePayload.from_image(f) if f is not None else None for f in frames
                ],
                frame_indices=indices,
                annotations=annotations,
                classifier_model=classifier_doc,
            )
        else:
            series = read_series_csv(source)
            req = s.PipelineRunRequest(
                mode="areas",
                config=config,
                series=[s.SeriesRow(t=m.t, area_mm2=m.area) for m in series.measurements],
                track_id=series.track_id,
            )
        resp = client.run_pipeline(req)
    for w in resp.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for skip in resp.skipped:
        print(f"skipped track {skip['track_id']}: {skip['reason']}", file=sys.stderr)
    _write_artifacts(resp.artifacts, Path(args.out))
    _print_report_summary(resp.reports, config)
    print(f"artifacts -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    records = read_area_csv(args.measured)
    truth = read_ground_truth(args.truth)
    req = s.EvaluateRequest(
        records=[
            s.AreaRecordModel(
                frame_index=r.frame_index,
                timestep=r.timestep,
                area_px=r.area_px,
                area_mm2=r.area_mm2,
                threshold=r.threshold,
                method=r.method,
            )
            for r in records
        ],
        truth=[s.GroundTruthRow(t=t, area_px=px, area_mm2=mm2) for t, px, mm2 in truth],
    )
    with make_client(args.server) as client:
        resp = client.evaluate(req)
    text = json.dumps(resp.metrics, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_train_classifier(args) -> int:
    samples = load_manifest(args.manifest)
    req = s.TrainRequest(
        samples=[
            s.TrainSample(image=s.ImagePayload.from_image(img), class_value=cls.value)
            for img, cls in samples
        ]
    )
    with make_client(args.server) as client:
        resp = client.train(req)
    Path(args.out).write_text(json.dumps(resp.model, indent=2) + "\n")
    print(f"trained on {len(samples)} samples -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wearcast",
        description="Surface-defect quantification and wear forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_flags: bool = True) -> None:
        p.add_argument("--server", default=None, help="base URL of a running service; default runs in-process")
        if config_flags:
            p.add_argument("--config", default=None, help="pipeline config file (key = value lines)")
            _add_config_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic defect-growth sequence")
    common(p, config_flags=False)
    p.add_argument("--out", required=True, help="output directory for frames and ground truth")
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--width", type=int, default=190)
    p.add_argument("--height", type=int, default=190)
    p.add_argument("--background", type=int, default=140)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--defect-intensity", type=int, default=30)
    p.add_argument("--growth", choices=["linear", "exponential"], default="linear")
    p.add_argument("--area-start", type=float, default=100.0)
    p.add_argument("--area-rate", type=float, default=20.0)
    p.add_argument("--speckle-rate", type=float, default=0.0)
    p.add_argument("--outlier-prob", type=float, default=0.0)
    p.add_argument("--outlier-magnitude", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mm-per-pixel", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="measure defect area per frame")
    common(p)
    p.add_argument("--frames", required=True, help="directory of .pgm frames")
    p.add_argument("--out", required=True, help="output areas CSV")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("track", help="detect and track defects over a frame sequence")
    common(p)
    p.add_argument("--frames", required=True, help="directory of .pgm frames")
    p.add_argument("--out", required=True, help="output tracks JSON")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("forecast", help="correct an area CSV and forecast the wear limit")
    common(p)
    p.add_argument("--input", required=True, help="area series CSV (t,area_mm2)")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("run", help="full pipeline on a frame directory or area CSV")
    common(p)
    p.add_argument("--input", required=True, help="frame directory or area series CSV")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="compare measured areas against a ground-truth CSV")
    common(p, config_flags=False)
    p.add_argument("--measured", required=True, help="areas CSV from segment/run")
    p.add_argument("--truth", required=True, help="ground_truth.csv from synth")
    p.add_argument("--out", default=None, help="optional metrics JSON output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-classifier", help="train the threshold classifier from a manifest")
    common(p, config_flags=False)
    p.add_argument("--manifest", required=True, help="CSV with image_path,threshold_class_value")
    p.add_argument("--out", required=True, help="output model JSON")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
