"""Defect segmentation inside an ROI: the four-step preprocessing chain,
largest-component extraction with boundary tracing, and area measurement
in pixels and mm2."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .raster import BinaryImage, GrayImage, StructuringElement, dilate, erode, invert, threshold
from .thresholding import ThresholdDecision

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# ring of 8 neighbors in clockwise order, used by the boundary tracer
_RING = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


@dataclass(frozen=True)
class Calibration:
    """Optical scale; area conversion factor is mm_per_pixel squared."""

    mm_per_pixel: float = 0.01

    def __post_init__(self):
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")

    @property
    def area_factor(self) -> float:
        return self.mm_per_pixel**2


@dataclass(frozen=True)
class Contour:
    """Ordered outer-boundary pixels of one 8-connected component."""

    points: tuple[tuple[int, int], ...]  # (x, y), clockwise from the top-left pixel
    pixel_count: int


@dataclass(frozen=True)
class AreaResult:
    area_px: int
    area_mm2: float
    threshold_used: ThresholdDecision
    contour: Optional[Contour]

    def __post_init__(self):
        if (self.area_px == 0) != (self.contour is None):
            raise ValueError("area_px must be 0 exactly when no contour was found")


def preprocess(
    roi: GrayImage,
    t: int,
    se: StructuringElement,
    dilate_passes: int = 1,
    erode_passes: int = 1,
) -> BinaryImage:
    """Threshold, invert, dilate, erode. The defect is darker than its
    surround, so after inversion it is the foreground."""
    mask = invert(threshold(roi, t))
    mask = dilate(mask, se, passes=dilate_passes)
    return erode(mask, se, passes=erode_passes)


def _trace_boundary(component: np.ndarray, start: tuple[int, int]) -> tuple[tuple[int, int], ...]:
    """Moore-neighbor trace of the outer boundary, clockwise from ``start``.

    ``start`` must be the component's first foreground pixel in row-major
    order, which guarantees its west neighbor is background.
    """
    height, width = component.shape

    def is_fg(x: int, y: int) -> bool:
        return 0 <= x < width and 0 <= y < height and bool(component[y, x])

    sx, sy = start
    points = [(sx, sy)]
    px, py = sx, sy
    bx, by = sx - 1, sy  # backtrack: background pixel we entered from
    first_move: Optional[tuple[int, int]] = None
    while True:
        ring_idx = _RING.index((bx - px, by - py))
        nxt = None
        last_bg = (bx, by)
        for step in range(1, len(_RING) + 1):
            dx, dy = _RING[(ring_idx + step) % len(_RING)]
            cand = (px + dx, py + dy)
            if is_fg(*cand):
                nxt = cand
                break
            last_bg = cand
        if nxt is None:
            break  # isolated pixel
        if (px, py) == (sx, sy) and nxt == first_move:
            break  # about to repeat the initial move: trace is closed
        if first_move is None:
            first_move = nxt
        px, py = nxt
        bx, by = last_bg
        if (px, py) != (sx, sy):
            points.append((px, py))
    return tuple(points)


def largest_component(mask: BinaryImage) -> Optional[Contour]:
    """Largest 8-connected foreground component, or None for an empty mask.

    Ties on pixel count go to the component whose first pixel in row-major
    order comes earliest.
    """
    labels, n = ndimage.label(mask.pixels, structure=EIGHT_CONNECTED)
    if n == 0:
        return None
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    max_count = counts.max()
    candidates = np.flatnonzero(counts == max_count)
    flat = labels.ravel()
    best_label = min(candidates, key=lambda lab: int(np.argmax(flat == lab)))
    first = int(np.argmax(flat == best_label))
    start = (first % mask.width, first // mask.width)
    points = _trace_boundary(labels == best_label, start)
    return Contour(points=points, pixel_count=int(max_count))


def measure(
    roi: GrayImage,
    decision: ThresholdDecision,
    se: StructuringElement,
    cal: Calibration,
    dilate_passes: int = 1,
    erode_passes: int = 1,
) -> AreaResult:
    """Run the preprocessing chain and measure the dominant defect component."""
    mask = preprocess(roi, decision.threshold, se, dilate_passes, erode_passes)
    contour = largest_component(mask)
    area_px = contour.pixel_count if contour is not None else 0
    return AreaResult(
        area_px=area_px,
        area_mm2=area_px * cal.area_factor,
        threshold_used=decision,
        contour=contour,
    )


@dataclass(frozen=True)
class AreaRecord:
    """One measured frame, as exported to the areas CSV."""

    frame_index: int
    timestep: int
    area_px: int
    area_mm2: float
    threshold: int
    method: str


AREA_CSV_FIELDS = ("frame_index", "timestep", "area_px", "area_mm2", "threshold", "method")


def write_area_csv(records: list[AreaRecord], target) -> None:
    close = False
    if hasattr(target, "write"):
        fh = target
    else:
        fh = open(target, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        writer.writerow(AREA_CSV_FIELDS)
        for r in records:
            writer.writerow(
                [r.frame_index, r.timestep, r.area_px, repr(r.area_mm2), r.threshold, r.method]
            )
    finally:
        if close:
            fh.close()


def read_area_csv(source) -> list[AreaRecord]:
    close = False
    if hasattr(source, "read"):
        fh = source
    else:
        fh = open(source, newline="")
        close = True
    try:
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            records.append(
                AreaRecord(
                    frame_index=int(row["frame_index"]),
                    timestep=int(row["timestep"]),
                    area_px=int(row["area_px"]),
                    area_mm2=float(row["area_mm2"]),
                    threshold=int(row["threshold"]),
                    method=row["method"],
                )
            )
        return records
    finally:
        if close:
            fh.close()
