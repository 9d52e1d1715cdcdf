"""Per-defect bounding boxes over a frame sequence.

Boxes come from an annotation file or from a segmentation-based blob
proposer; a temporal fallback keeps every started track populated: a frame
without a detection reuses the previous box, slightly grown.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .raster import GrayImage, StructuringElement
from .segment import EIGHT_CONNECTED, preprocess
from .thresholding import ThresholdDecision

SOURCES = ("annotated", "proposed", "fallback")


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("box width and height must be positive")

    @property
    def area(self) -> int:
        return self.w * self.h

    def clip(self, frame_w: int, frame_h: int) -> "BoundingBox":
        x0 = max(self.x, 0)
        y0 = max(self.y, 0)
        x1 = min(self.x + self.w, frame_w)
        y1 = min(self.y + self.h, frame_h)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"box {self} lies entirely outside a {frame_w}x{frame_h} frame")
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def scaled(self, grow: float) -> "BoundingBox":
        """Scale about the center; the result always contains the original."""
        if grow < 1.0:
            raise ValueError("grow factor must be >= 1")
        nw = round(self.w * grow)
        nh = round(self.h * grow)
        nx = round(self.x + (self.w - nw) / 2)
        ny = round(self.y + (self.h - nh) / 2)
        return BoundingBox(nx, ny, nw, nh)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class TrackEntry:
    t: int
    box: BoundingBox
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown box source {self.source!r}")


@dataclass
class DefectTrack:
    track_id: int
    entries: list[TrackEntry] = field(default_factory=list)

    def append(self, entry: TrackEntry) -> None:
        if self.entries and entry.t <= self.entries[-1].t:
            raise ValueError(
                f"track {self.track_id}: timestep {entry.t} not after {self.entries[-1].t}"
            )
        self.entries.append(entry)

    @property
    def last_box(self) -> Optional[BoundingBox]:
        return self.entries[-1].box if self.entries else None

    @property
    def last_t(self) -> Optional[int]:
        return self.entries[-1].t if self.entries else None


def propose_boxes(
    img: GrayImage,
    decision: ThresholdDecision,
    min_area: int,
    se: StructuringElement = StructuringElement(1),
    margin: int = 2,
    dilate_passes: int = 1,
    erode_passes: int = 1,
) -> list[BoundingBox]:
    """One box per foreground component of at least ``min_area`` pixels.

    Boxes are tight component bounds expanded by ``margin`` and clipped to the
    image, ordered by each component's first pixel in row-major order.
    """
    if min_area <= 0:
        raise ValueError("min_area must be positive")
    mask = preprocess(img, decision.threshold, se, dilate_passes, erode_passes)
    labels, n = ndimage.label(mask.pixels, structure=EIGHT_CONNECTED)
    boxes: list[tuple[int, BoundingBox]] = []
    flat = labels.ravel()
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        if ys.size < min_area:
            continue
        x0 = int(xs.min()) - margin
        y0 = int(ys.min()) - margin
        x1 = int(xs.max()) + 1 + margin
        y1 = int(ys.max()) + 1 + margin
        box = BoundingBox(x0, y0, x1 - x0, y1 - y0).clip(img.width, img.height)
        first = int(np.argmax(flat == lab))
        boxes.append((first, box))
    boxes.sort(key=lambda item: item[0])
    return [b for _, b in boxes]


def apply_fallback(
    track: DefectTrack,
    t: int,
    detected: Optional[BoundingBox],
    grow: float = 1.2,
    frame_size: Optional[tuple[int, int]] = None,
) -> Optional[BoundingBox]:
    """Box for timestep t: the detection when present, otherwise the previous
    box grown about its center. None when the track has not started yet."""
    if detected is not None:
        return detected
    prev = track.last_box
    if prev is None:
        return None
    box = prev.scaled(grow)
    if frame_size is not None:
        box = box.clip(frame_size[0], frame_size[1])
    return box


def associate(
    tracks: list[DefectTrack],
    boxes: list[BoundingBox],
    t: int,
    iou_floor: float = 0.1,
    grow: float = 1.2,
    frame_size: Optional[tuple[int, int]] = None,
    source: str = "proposed",
) -> list[DefectTrack]:
    """Greedy IoU matching of frame-t boxes onto the open tracks.

    Unmatched boxes start new tracks; unmatched tracks get a fallback box so
    the no-gap invariant holds. Ties resolve to the lower track_id, then to
    the earlier box in the input order.
    """
    pairs = []
    for ti, track in enumerate(tracks):
        last = track.last_box
        if last is None:
            continue
        for bi, box in enumerate(boxes):
            v = iou(last, box)
            if v >= iou_floor:
                pairs.append((-v, track.track_id, bi, ti))
    pairs.sort()
    matched_tracks: set[int] = set()
    matched_boxes: set[int] = set()
    for _, _, bi, ti in pairs:
        if ti in matched_tracks or bi in matched_boxes:
            continue
        matched_tracks.add(ti)
        matched_boxes.add(bi)
        tracks[ti].append(TrackEntry(t=t, box=boxes[bi], source=source))
    next_id = max((tr.track_id for tr in tracks), default=-1) + 1
    for bi, box in enumerate(boxes):
        if bi in matched_boxes:
            continue
        track = DefectTrack(track_id=next_id)
        track.append(TrackEntry(t=t, box=box, source=source))
        tracks.append(track)
        next_id += 1
    for ti, track in enumerate(tracks):
        if ti in matched_tracks or track.last_t == t or not track.entries:
            continue
        fallback = apply_fallback(track, t, None, grow=grow, frame_size=frame_size)
        if fallback is not None:
            track.append(TrackEntry(t=t, box=fallback, source="fallback"))
    return tracks


class SequenceTracker:
    """Feeds one frame sequence, strictly ordered in t, into a track set."""

    def __init__(
        self,
        frame_size: Optional[tuple[int, int]] = None,
        iou_floor: float = 0.1,
        grow: float = 1.2,
    ):
        if grow < 1.0:
            raise ValueError("grow factor must be >= 1")
        self.frame_size = frame_size
        self.iou_floor = iou_floor
        self.grow = grow
        self.tracks: list[DefectTrack] = []

    def step_proposed(self, t: int, boxes: list[BoundingBox]) -> None:
        associate(
            self.tracks,
            boxes,
            t,
            iou_floor=self.iou_floor,
            grow=self.grow,
            frame_size=self.frame_size,
            source="proposed",
        )

    def step_annotated(self, t: int, labeled: list[tuple[int, BoundingBox]]) -> None:
        """Ingest boxes that carry their own track ids; missing tracks fall back."""
        seen: set[int] = set()
        by_id = {track.track_id: track for track in self.tracks}
        for track_id, box in labeled:
            if track_id in seen:
                raise ValueError(f"duplicate track {track_id} at frame {t}")
            seen.add(track_id)
            if self.frame_size is not None:
                box = box.clip(self.frame_size[0], self.frame_size[1])
            track = by_id.get(track_id)
            if track is None:
                track = DefectTrack(track_id=track_id)
                self.tracks.append(track)
                self.tracks.sort(key=lambda tr: tr.track_id)
            track.append(TrackEntry(t=t, box=box, source="annotated"))
        for track in self.tracks:
            if track.track_id in seen or not track.entries:
                continue
            fallback = apply_fallback(track, t, None, grow=self.grow, frame_size=self.frame_size)
            if fallback is not None:
                track.append(TrackEntry(t=t, box=fallback, source="fallback"))


ANNOTATION_FIELDS = ("frame_index", "track_id", "x", "y", "w", "h")


def read_annotations(source) -> dict[int, list[tuple[int, BoundingBox]]]:
    """Annotation CSV -> {frame_index: [(track_id, box), ...]}."""
    close = False
    if hasattr(source, "read"):
        fh = source
    else:
        fh = open(source, newline="")
        close = True
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(ANNOTATION_FIELDS) <= set(reader.fieldnames):
            raise ValueError(f"annotation CSV needs columns {','.join(ANNOTATION_FIELDS)}")
        frames: dict[int, list[tuple[int, BoundingBox]]] = {}
        for row in reader:
            frame = int(row["frame_index"])
            box = BoundingBox(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]))
            frames.setdefault(frame, []).append((int(row["track_id"]), box))
        return frames
    finally:
        if close:
            fh.close()


def tracks_to_doc(tracks: list[DefectTrack]) -> list[dict]:
    return [
        {
            "track_id": track.track_id,
            "entries": [
                {
                    "t": e.t,
                    "box": {"x": e.box.x, "y": e.box.y, "w": e.box.w, "h": e.box.h},
                    "source": e.source,
                }
                for e in track.entries
            ],
        }
        for track in tracks
    ]


def tracks_from_doc(doc: list[dict]) -> list[DefectTrack]:
    tracks = []
    for td in doc:
        track = DefectTrack(track_id=int(td["track_id"]))
        for e in td["entries"]:
            b = e["box"]
            track.append(
                TrackEntry(
                    t=int(e["t"]),
                    box=BoundingBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"])),
                    source=e["source"],
                )
            )
        tracks.append(track)
    return tracks


def write_tracks(tracks: list[DefectTrack], path) -> None:
    Path(path).write_text(json.dumps(tracks_to_doc(tracks), indent=2) + "\n")
